//! Seeded synthetic transient trajectories and the in-memory dataset.
//!
//! Each sample is a `1 × H × W` image whose rows are monitored quantities
//! and whose columns are time steps. Stable samples are damped oscillations,
//! unstable samples have a diverging envelope.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attack::NoiseSpec;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Tolerance for probability vectors summing to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Stable = 0,
    Unstable = 1,
}

impl Class {
    pub const NAMES: [&'static str; 2] = ["stable", "unstable"];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        match i {
            0 => Some(Class::Stable),
            1 => Some(Class::Unstable),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    pub fn parse(s: &str) -> Option<Class> {
        match s {
            "stable" | "0" => Some(Class::Stable),
            "unstable" | "1" => Some(Class::Unstable),
            _ => None,
        }
    }

    pub fn other(self) -> Class {
        match self {
            Class::Stable => Class::Unstable,
            Class::Unstable => Class::Stable,
        }
    }
}

/// Argmax over two class scores; ties go to [`Class::Unstable`].
#[inline]
pub fn argmax2(p: [f64; 2]) -> Class {
    if p[0] > p[1] {
        Class::Stable
    } else {
        Class::Unstable
    }
}

/// A probability distribution over `{stable, unstable}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    p: [f64; 2],
}

impl SoftLabel {
    pub fn new(p_stable: f64, p_unstable: f64) -> Result<Self> {
        let l = SoftLabel {
            p: [p_stable, p_unstable],
        };
        if l.is_valid() {
            Ok(l)
        } else {
            Err(Error::Config(format!(
                "soft label ({p_stable}, {p_unstable}) is not a distribution"
            )))
        }
    }

    pub fn one_hot(c: Class) -> Self {
        let mut p = [0.0; 2];
        p[c.index()] = 1.0;
        SoftLabel { p }
    }

    #[inline]
    pub fn probs(&self) -> [f64; 2] {
        self.p
    }

    pub fn p_stable(&self) -> f64 {
        self.p[0]
    }

    pub fn p_unstable(&self) -> f64 {
        self.p[1]
    }

    pub fn argmax(&self) -> Class {
        argmax2(self.p)
    }

    pub fn is_valid(&self) -> bool {
        self.p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            && (self.p[0] + self.p[1] - 1.0).abs() <= SIMPLEX_TOL
    }

    pub(crate) fn from_probs_unchecked(p: [f64; 2]) -> Self {
        SoftLabel { p }
    }
}

/// Parameters of the synthetic trajectory generator. Envelope rates are in
/// units of one over the observation window, oscillation frequencies in
/// cycles per window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    /// Probability that a sample is unstable.
    pub balance: f64,
    pub stable_damping: (f64, f64),
    pub unstable_growth: (f64, f64),
    pub frequency: (f64, f64),
    pub amplitude: (f64, f64),
    /// Initial phase in radians.
    pub phase: (f64, f64),
    /// Fraction of channels that carry the oscillation; the rest are noise.
    pub active_channels: f64,
    pub noise_sigma: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 4000,
            h: 16,
            w: 32,
            balance: 0.5,
            stable_damping: (1.0, 2.5),
            unstable_growth: (1.0, 2.5),
            frequency: (1.5, 2.0),
            amplitude: (0.8, 1.0),
            phase: (0.0, 1.0),
            active_channels: 1.0,
            noise_sigma: 0.5,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if self.n == 0 || self.h == 0 || self.w < 4 {
            return Err(Error::Config("generator needs n > 0, h > 0, w >= 4".into()));
        }
        if !(0.0..=1.0).contains(&self.balance) || !(0.0..=1.0).contains(&self.active_channels) {
            return Err(Error::Config("balance and active_channels must lie in [0, 1]".into()));
        }
        for (name, r) in [
            ("stable_damping", self.stable_damping),
            ("unstable_growth", self.unstable_growth),
            ("frequency", self.frequency),
            ("amplitude", self.amplitude),
            ("phase", self.phase),
        ] {
            if !range_ok(r) {
                return Err(Error::Config(format!("{name} range is empty")));
            }
        }
        if self.stable_damping.0 <= 0.0 || self.unstable_growth.0 <= 0.0 {
            return Err(Error::Config("envelope rates must be strictly positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Features, ground truth, the current (possibly corrected) training labels,
/// and attack/annotation bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    h: usize,
    w: usize,
    features: Vec<f32>,
    labels_true: Vec<Class>,
    labels_train: Vec<SoftLabel>,
    flipped: Vec<bool>,
    annotated: Vec<bool>,
    injection: Option<NoiseSpec>,
    generator: Option<GeneratorSpec>,
}

/// Constructor arguments for [`Dataset::from_parts`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetParts {
    pub h: usize,
    pub w: usize,
    pub features: Vec<f32>,
    pub labels_true: Vec<Class>,
    pub labels_train: Vec<SoftLabel>,
    pub flipped: Vec<bool>,
    pub annotated: Vec<bool>,
    pub injection: Option<NoiseSpec>,
    pub generator: Option<GeneratorSpec>,
}

impl Dataset {
    pub fn from_parts(p: DatasetParts) -> Result<Self> {
        let n = p.labels_true.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if p.features.len() != n * p.h * p.w {
            return Err(Error::shape("dataset.features", &[n * p.h * p.w], &[p.features.len()]));
        }
        for (name, len) in [
            ("labels_train", p.labels_train.len()),
            ("flipped", p.flipped.len()),
            ("annotated", p.annotated.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!("{name} has {len} entries, expected {n}")));
            }
        }
        if let Some(i) = p.labels_train.iter().position(|l| !l.is_valid()) {
            return Err(Error::Config(format!("training label {i} is not a distribution")));
        }
        if p.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("dataset features"));
        }
        Ok(Dataset {
            h: p.h,
            w: p.w,
            features: p.features,
            labels_true: p.labels_true,
            labels_train: p.labels_train,
            flipped: p.flipped,
            annotated: p.annotated,
            injection: p.injection,
            generator: p.generator,
        })
    }

    pub fn into_parts(self) -> DatasetParts {
        DatasetParts {
            h: self.h,
            w: self.w,
            features: self.features,
            labels_true: self.labels_true,
            labels_train: self.labels_train,
            flipped: self.flipped,
            annotated: self.annotated,
            injection: self.injection,
            generator: self.generator,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels_true.is_empty()
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn sample_len(&self) -> usize {
        self.h * self.w
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let d = self.sample_len();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn labels_true(&self) -> &[Class] {
        &self.labels_true
    }

    pub fn labels_train(&self) -> &[SoftLabel] {
        &self.labels_train
    }

    pub fn flipped_mask(&self) -> &[bool] {
        &self.flipped
    }

    pub fn annotated_mask(&self) -> &[bool] {
        &self.annotated
    }

    pub fn injection(&self) -> Option<&NoiseSpec> {
        self.injection.as_ref()
    }

    pub fn generator(&self) -> Option<&GeneratorSpec> {
        self.generator.as_ref()
    }

    pub(crate) fn labels_train_mut(&mut self) -> &mut [SoftLabel] {
        &mut self.labels_train
    }

    pub(crate) fn set_injection(&mut self, spec: NoiseSpec, flipped: Vec<bool>) {
        self.injection = Some(spec);
        self.flipped = flipped;
    }

    /// Pins an expert label on a sample.
    pub(crate) fn annotate(&mut self, i: usize, label: Class) {
        self.labels_train[i] = SoftLabel::one_hot(label);
        self.annotated[i] = true;
    }

    /// Features of the given samples as a `[B, 1, H, W]` tensor.
    pub fn batch_features(&self, idx: &[usize]) -> Tensor {
        let d = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend(self.sample(i).iter().map(|&v| v as f64));
        }
        Tensor::new(vec![idx.len(), 1, self.h, self.w], data).expect("consistent batch shape")
    }

    /// Training labels of the given samples as a `[B, 2]` tensor.
    pub fn batch_labels(&self, idx: &[usize]) -> Tensor {
        let data = idx.iter().flat_map(|&i| self.labels_train[i].probs()).collect();
        Tensor::new(vec![idx.len(), 2], data).expect("consistent label shape")
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.sample_len();
        let mut features = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            features.extend_from_slice(self.sample(i));
        }
        Dataset {
            h: self.h,
            w: self.w,
            features,
            labels_true: idx.iter().map(|&i| self.labels_true[i]).collect(),
            labels_train: idx.iter().map(|&i| self.labels_train[i]).collect(),
            flipped: idx.iter().map(|&i| self.flipped[i]).collect(),
            annotated: idx.iter().map(|&i| self.annotated[i]).collect(),
            injection: self.injection.clone(),
            generator: self.generator.clone(),
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for l in &self.labels_true {
            c[l.index()] += 1;
        }
        c
    }
}

fn uniform<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

/// Raw (un-normalized) trajectory of one channel.
fn channel_trajectory(out: &mut [f64], amplitude: f64, rate: f64, freq: f64, phase: f64) {
    let last = (out.len() - 1) as f64;
    for (k, v) in out.iter_mut().enumerate() {
        let t = k as f64 / last;
        *v = amplitude * math::exp(-rate * t) * math::sin(2.0 * PI * freq * t + phase);
    }
}

/// Generates a dataset from `spec`. Deterministic per seed.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.h, spec.w);
    let mut raw = vec![0.0f64; spec.n * h * w];
    let mut labels = Vec::with_capacity(spec.n);
    let mut row = vec![0.0; w];
    for i in 0..spec.n {
        let class = if rng.random_bool(spec.balance) {
            Class::Unstable
        } else {
            Class::Stable
        };
        let rate = match class {
            Class::Stable => uniform(&mut rng, spec.stable_damping),
            Class::Unstable => -uniform(&mut rng, spec.unstable_growth),
        };
        for c in 0..h {
            let active = rng.random_bool(spec.active_channels);
            let amplitude = uniform(&mut rng, spec.amplitude);
            let freq = uniform(&mut rng, spec.frequency);
            let phase = uniform(&mut rng, spec.phase);
            if active {
                channel_trajectory(&mut row, amplitude, rate, freq, phase);
            } else {
                row.fill(0.0);
            }
            let dst = &mut raw[(i * h + c) * w..][..w];
            for (d, &s) in dst.iter_mut().zip(&row) {
                let noise: f64 = rng.sample(StandardNormal);
                *d = s + spec.noise_sigma * noise;
            }
        }
        labels.push(class);
    }
    normalize_channels(&mut raw, spec.n, h, w);
    let features = raw.iter().map(|&v| v as f32).collect();
    Dataset::from_parts(DatasetParts {
        h,
        w,
        features,
        labels_train: labels.iter().map(|&c| SoftLabel::one_hot(c)).collect(),
        labels_true: labels,
        flipped: vec![false; spec.n],
        annotated: vec![false; spec.n],
        injection: None,
        generator: Some(spec.clone()),
    })
}

/// Z-normalizes every channel (row) over all samples and time steps.
fn normalize_channels(raw: &mut [f64], n: usize, h: usize, w: usize) {
    for c in 0..h {
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..n {
            for &v in &raw[(i * h + c) * w..][..w] {
                sum += v;
                sq += v * v;
            }
        }
        let count = (n * w) as f64;
        let mean = sum / count;
        let var = (sq / count - mean * mean).max(0.0);
        let sd = if var > 1e-24 { math::sqrt(var) } else { 1.0 };
        for i in 0..n {
            for v in &mut raw[(i * h + c) * w..][..w] {
                *v = (*v - mean) / sd;
            }
        }
    }
}

/// Stratified, seeded split. `ratio` is the training fraction; the overall
/// training size is `round(ratio · N)`.
pub fn split(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n = ds.len();
    let n_train = math::floor(ratio * n as f64 + 0.5) as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::DegenerateSplit {
            train: n_train,
            test: n - n_train,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, c) in ds.labels_true().iter().enumerate() {
        by_class[c.index()].push(i);
    }
    for group in by_class.iter_mut() {
        group.shuffle(&mut rng);
    }
    let stable_train = (math::floor(ratio * by_class[0].len() as f64 + 0.5) as usize)
        .min(by_class[0].len())
        .min(n_train);
    let unstable_train = n_train - stable_train;
    if unstable_train > by_class[1].len() {
        return Err(Error::DegenerateSplit {
            train: n_train,
            test: n - n_train,
        });
    }
    let mut train: Vec<usize> = by_class[0][..stable_train]
        .iter()
        .chain(&by_class[1][..unstable_train])
        .copied()
        .collect();
    let mut test: Vec<usize> = by_class[0][stable_train..]
        .iter()
        .chain(&by_class[1][unstable_train..])
        .copied()
        .collect();
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64, n: usize) -> GeneratorSpec {
        GeneratorSpec {
            seed,
            n,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_spec(11, 50)).unwrap();
        let b = generate(&small_spec(11, 50)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small_spec(12, 50)).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn labels_start_clean() {
        let ds = generate(&small_spec(1, 40)).unwrap();
        for (l, c) in ds.labels_train().iter().zip(ds.labels_true()) {
            assert_eq!(*l, SoftLabel::one_hot(*c));
        }
        assert!(ds.flipped_mask().iter().all(|f| !f));
        assert!(ds.annotated_mask().iter().all(|f| !f));
        assert!(ds.injection().is_none());
    }

    #[test]
    fn argmax_ties_go_unstable() {
        assert_eq!(argmax2([0.9, 0.1]), Class::Stable);
        assert_eq!(argmax2([0.5, 0.5]), Class::Unstable);
        assert_eq!(SoftLabel::new(0.5, 0.5).unwrap().argmax(), Class::Unstable);
    }

    #[test]
    fn soft_label_validation() {
        assert!(SoftLabel::new(0.3, 0.7).is_ok());
        assert!(SoftLabel::new(0.3, 0.6).is_err());
        assert!(SoftLabel::new(-0.1, 1.1).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = GeneratorSpec::default();
        s.n = 0;
        assert!(generate(&s).is_err());
        let mut s = GeneratorSpec::default();
        s.frequency = (3.0, 1.0);
        assert!(s.validate().is_err());
        let mut s = GeneratorSpec::default();
        s.stable_damping = (0.0, 1.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn split_sizes_follow_ratio() {
        let ds = generate(&small_spec(5, 4300)).unwrap();
        let (tr, te) = split(&ds, 0.75, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (3225, 1075));
        let ds = generate(&small_spec(6, 3100)).unwrap();
        let (tr, te) = split(&ds, 0.75, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (2325, 775));
        let frac = |d: &Dataset| d.class_counts()[1] as f64 / d.len() as f64;
        assert!((frac(&tr) - frac(&ds)).abs() <= 0.02);
        assert!((frac(&te) - frac(&ds)).abs() <= 0.02);
    }

    #[test]
    fn split_is_seeded_disjoint_and_exhaustive() {
        let ds = generate(&small_spec(5, 200)).unwrap();
        let (a1, b1) = split(&ds, 0.75, 1).unwrap();
        let (a2, b2) = split(&ds, 0.75, 1).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        // Every sample appears exactly once across the two parts.
        let mut all: Vec<Vec<f32>> = a1
            .features()
            .chunks(ds.sample_len())
            .chain(b1.features().chunks(ds.sample_len()))
            .map(|c| c.to_vec())
            .collect();
        let mut orig: Vec<Vec<f32>> = ds.features().chunks(ds.sample_len()).map(|c| c.to_vec()).collect();
        let key = |v: &Vec<f32>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        all.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(all, orig);
    }

    #[test]
    fn degenerate_splits_are_rejected() {
        let ds = generate(&small_spec(5, 3)).unwrap();
        assert!(matches!(split(&ds, 0.01, 0), Err(Error::DegenerateSplit { .. })));
        assert!(matches!(split(&ds, 0.99, 0), Err(Error::DegenerateSplit { .. })));
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
    }
}
