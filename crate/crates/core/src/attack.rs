//! False-label injection through a 2×2 noise transition matrix.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Class, Dataset, SoftLabel};
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Both classes flip with the same probability.
    Sym,
    /// Only unstable samples flip (to stable).
    Asym,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Sym => "sym",
            AttackKind::Asym => "asym",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sym" => Some(AttackKind::Sym),
            "asym" => Some(AttackKind::Asym),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: AttackKind,
    pub ratio: f64,
    pub seed: u64,
    /// Flip exactly `round(ratio · n_class)` samples per affected class
    /// instead of independent Bernoulli draws.
    #[serde(default)]
    pub exact: bool,
}

impl NoiseSpec {
    pub fn new(kind: AttackKind, ratio: f64, seed: u64) -> Self {
        Self {
            kind,
            ratio,
            seed,
            exact: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("injection ratio {} outside [0, 1]", self.ratio)));
        }
        Ok(())
    }
}

/// Row-stochastic `G[i][j] = p(observed = j | true = i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix(pub [[f64; 2]; 2]);

impl TransitionMatrix {
    pub fn flip_probability(&self, from: Class) -> f64 {
        self.0[from.index()][from.other().index()]
    }
}

pub fn make_matrix(spec: &NoiseSpec) -> Result<TransitionMatrix> {
    spec.validate()?;
    let v = spec.ratio;
    Ok(TransitionMatrix(match spec.kind {
        AttackKind::Sym => [[1.0 - v, v], [v, 1.0 - v]],
        AttackKind::Asym => [[1.0, 0.0], [v, 1.0 - v]],
    }))
}

/// Resamples every training label from its transition-matrix row.
///
/// Rejects datasets that were already injected or whose training labels
/// have drifted from the ground truth.
pub fn inject(ds: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    let g = make_matrix(spec)?;
    if ds.injection().is_some() {
        return Err(Error::AlreadyInjected);
    }
    let clean = ds
        .labels_train()
        .iter()
        .zip(ds.labels_true())
        .all(|(l, &c)| *l == SoftLabel::one_hot(c));
    if !clean {
        return Err(Error::AlreadyInjected);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let flipped: Vec<bool> = if spec.exact {
        let mut mask = alloc::vec![false; ds.len()];
        for class in [Class::Stable, Class::Unstable] {
            let mut members: Vec<usize> = (0..ds.len())
                .filter(|&i| ds.labels_true()[i] == class)
                .collect();
            let p = g.flip_probability(class);
            let k = (math::floor(p * members.len() as f64 + 0.5) as usize).min(members.len());
            members.shuffle(&mut rng);
            for &i in &members[..k] {
                mask[i] = true;
            }
        }
        mask
    } else {
        ds.labels_true()
            .iter()
            .map(|&c| rng.random::<f64>() < g.flip_probability(c))
            .collect()
    };
    let mut out = ds.clone();
    for (i, label) in out.labels_train_mut().iter_mut().enumerate() {
        let truth = ds.labels_true()[i];
        let observed = if flipped[i] { truth.other() } else { truth };
        *label = SoftLabel::one_hot(observed);
    }
    out.set_injection(spec.clone(), flipped);
    Ok(out)
}
