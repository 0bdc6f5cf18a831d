//! Five-point central finite-difference checks of every hand-written gradient: each
//! layer kind, the clustering layer, the loss heads and the three module
//! objectives of [`MmrModel`].
//!
//! Relative error is `|a − n| / max(|a|, |n|, REL_FLOOR)` for analytic `a`
//! and numeric `n`; the floor keeps entries that are zero up to rounding from
//! dominating.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{generate, GeneratorSpec};
use crate::error::Result;
use crate::fuzzy::{self, ClusterState};
use crate::model::{Architecture, MmrModel, ModelConfig};
use crate::nn::ActivationKind;
use crate::nn::{loss, Layer};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-3;
pub const REL_FLOOR: f64 = 1e-6;
/// Coordinates probed per parameter tensor in the model-level checks.
pub const MODEL_COORDS: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    t
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Compares `analytic` against the five-point central difference of `f` in
/// the coordinates `idx` of `x`.
fn probe<F: FnMut(&Tensor) -> Result<f64>>(x: &Tensor, analytic: &Tensor, idx: &[usize], mut f: F) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for &i in idx {
        let orig = xp.data()[i];
        let mut at = |d: f64| {
            xp.data_mut()[i] = orig + d;
            f(&xp)
        };
        let (p1, m1, p2, m2) = (at(STEP)?, at(-STEP)?, at(2.0 * STEP)?, at(-2.0 * STEP)?);
        xp.data_mut()[i] = orig;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * STEP);
        worst = worst.max(rel(analytic.data()[i], numeric));
    }
    Ok(worst)
}

fn sample_coords(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    (0..k).map(|_| rng.random_range(0..len)).collect()
}

/// Keeps activation inputs clear of the kinks at zero.
fn away_from_zero(t: &mut Tensor) {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { *v - 0.05 } else { *v + 0.05 };
        }
    }
}

fn check_layer(name: &str, layer: Layer, mut x: Tensor, rng: &mut ChaCha8Rng) -> Result<Check> {
    if matches!(layer, Layer::Activation(_)) {
        away_from_zero(&mut x);
    }
    let y = layer.forward(&x)?;
    let gy = normal(rng, y.shape());
    let mut grads: Vec<Tensor> = layer.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let gx = layer.backward(&x, &y, &gy, &mut grads)?;
    let all: Vec<usize> = (0..x.len()).collect();
    let mut worst = probe(&x, &gx, &all, |xp| Ok(dot(&layer.forward(xp)?, &gy)))?;
    let mut coords = x.len();
    for (k, g) in grads.iter().enumerate() {
        let p0 = layer.params()[k].clone();
        let idx: Vec<usize> = (0..p0.len()).collect();
        coords += idx.len();
        let mut l = layer.clone();
        worst = worst.max(probe(&p0, g, &idx, |pp| {
            *l.params_mut()[k] = pp.clone();
            Ok(dot(&l.forward(&x)?, &gy))
        })?);
    }
    Ok(Check {
        name: format!("layer {name}"),
        max_rel_err: worst,
        coords,
    })
}

/// Every layer kind, including each activation.
pub fn layer_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let l = Layer::dense(5, 4, &mut rng);
    out.push(check_layer("dense", l, normal(&mut rng, &[3, 5]), &mut rng)?);
    let l = Layer::conv2d(2, 3, 5, 2, 2, &mut rng);
    out.push(check_layer("conv2d stride 2", l, normal(&mut rng, &[2, 2, 8, 8]), &mut rng)?);
    let l = Layer::conv2d(2, 2, 3, 1, 1, &mut rng);
    out.push(check_layer("conv2d stride 1", l, normal(&mut rng, &[2, 2, 5, 6]), &mut rng)?);
    let l = Layer::conv_transpose2d(3, 2, 5, 2, 2, 1, &mut rng);
    out.push(check_layer("conv_transpose2d", l, normal(&mut rng, &[2, 3, 4, 4]), &mut rng)?);
    let l = Layer::conv_transpose2d(2, 2, 4, 2, 1, 0, &mut rng);
    out.push(check_layer("conv_transpose2d no output padding", l, normal(&mut rng, &[2, 2, 3, 3]), &mut rng)?);
    for kind in [
        ActivationKind::Identity,
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
    ] {
        let x = normal(&mut rng, &[3, 7]);
        out.push(check_layer(&format!("{kind:?}"), Layer::Activation(kind), x, &mut rng)?);
    }
    out.push(check_layer("softmax", Layer::Softmax, normal(&mut rng, &[4, 3]), &mut rng)?);
    out.push(check_layer("flatten", Layer::Flatten, normal(&mut rng, &[2, 1, 3, 4]), &mut rng)?);
    out.push(check_layer(
        "reshape",
        Layer::Reshape(vec![2, 3]),
        normal(&mut rng, &[2, 6]),
        &mut rng,
    )?);
    Ok(out)
}

fn probabilities(rng: &mut ChaCha8Rng, rows: usize) -> Tensor {
    let mut t = Tensor::zeros(&[rows, 2]);
    for r in 0..rows {
        let a: f64 = rng.random_range(0.1..0.9);
        t.row_mut(r).copy_from_slice(&[a, 1.0 - a]);
    }
    t
}

/// μ̄ is a constant input of the clustering layer, so the fixture moves it
/// off the data by twice the largest `‖z − mean‖`: every `‖z − μ̄‖` then lies
/// within a factor of three of the others. Centers sit within a fifth of the
/// smallest `‖z − μ̄‖` of μ̄, which keeps every membership base above half of
/// `‖z − μ̄‖²` and far from the clamp.
fn cluster_state_for(rng: &mut ChaCha8Rng, z: &Tensor) -> ClusterState {
    let data_mean = fuzzy::mean_embedding(z);
    let dim = data_mean.len();
    let dist = |row: &[f64], p: &[f64]| row.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let max_u = (0..z.batch()).map(|i| dist(z.row(i), &data_mean)).fold(0.0, f64::max).max(1e-3);
    let dir = normal(rng, &[dim]);
    let norm = dist(dir.data(), &vec![0.0; dim]).max(1e-12);
    let mean: Vec<f64> = data_mean.iter().zip(dir.data()).map(|(m, d)| m + 2.0 * max_u * d / norm).collect();
    let min_u = (0..z.batch()).map(|i| dist(z.row(i), &mean)).fold(f64::INFINITY, f64::min);
    let mut centers = normal(rng, &[2, dim]);
    for j in 0..2 {
        let row = centers.row_mut(j);
        let n = dist(row, &vec![0.0; dim]).max(1e-12);
        for (v, m) in row.iter_mut().zip(&mean) {
            *v = m + *v / n * 0.2 * min_u;
        }
    }
    ClusterState {
        centers,
        mean,
        fuzzifier: 2.0,
    }
}

/// The loss heads (reconstruction, cross-entropy, weighted cross-entropy,
/// KL) and the clustering layer.
pub fn head_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let all = |t: &Tensor| (0..t.len()).collect::<Vec<_>>();

    let target = normal(&mut rng, &[3, 1, 2, 4]);
    let pred = normal(&mut rng, &[3, 1, 2, 4]);
    let h = loss::reconstruction(&pred, &target)?;
    let e = probe(&pred, &h.grad, &all(&pred), |p| Ok(loss::reconstruction(p, &target)?.loss()))?;
    out.push(Check {
        name: "loss reconstruction".into(),
        max_rel_err: e,
        coords: pred.len(),
    });

    let labels = probabilities(&mut rng, 4);
    let probs = probabilities(&mut rng, 4);
    let weights = [1.0, 3.0, 1.0, 3.0];
    for (name, w) in [("loss cross-entropy", None), ("loss weighted cross-entropy", Some(&weights[..]))] {
        let h = loss::cross_entropy(&probs, &labels, w)?;
        let e = probe(&probs, &h.grad, &all(&probs), |p| Ok(loss::cross_entropy(p, &labels, w)?.loss()))?;
        out.push(Check {
            name: name.into(),
            max_rel_err: e,
            coords: probs.len(),
        });
    }

    let q = probabilities(&mut rng, 4);
    let p = probabilities(&mut rng, 4);
    let (h, _) = loss::kl_divergence(&q, &p)?;
    let e = probe(&q, &h.grad, &all(&q), |qq| Ok(loss::kl_divergence(qq, &p)?.0.loss()))?;
    out.push(Check {
        name: "loss kl".into(),
        max_rel_err: e,
        coords: q.len(),
    });

    let z = normal(&mut rng, &[5, 3]);
    let state = cluster_state_for(&mut rng, &z);
    let g = normal(&mut rng, &[5, 2]);
    let (gz, gc) = fuzzy::assignment_backward(&z, &state, &g)?;
    let mut e = probe(&z, &gz, &all(&z), |zz| Ok(dot(&fuzzy::update_assignments(zz, &state)?, &g)))?;
    e = e.max(probe(&state.centers, &gc, &all(&state.centers), |c| {
        let s = ClusterState {
            centers: c.clone(),
            ..state.clone()
        };
        Ok(dot(&fuzzy::update_assignments(&z, &s)?, &g))
    })?);
    out.push(Check {
        name: "layer clustering".into(),
        max_rel_err: e,
        coords: z.len() + state.centers.len(),
    });
    Ok(out)
}

fn model_fixture(seed: u64, architecture: Architecture) -> Result<(MmrModel, Tensor, Tensor, Tensor)> {
    let config = ModelConfig {
        architecture,
        embed_dim: 4,
        classifier_hidden: 5,
        activation: ActivationKind::Tanh,
        ..ModelConfig::default()
    };
    let ds = generate(&GeneratorSpec {
        seed,
        n: 4,
        h: 8,
        w: 8,
        ..GeneratorSpec::default()
    })?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let x = ds.batch_features(&idx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let labels = probabilities(&mut rng, ds.len());
    let mut model = MmrModel::new(config, 8, 8, seed)?;
    // Fresh conv encoders map the batch into a ball of radius ~0.03, where a
    // step of 1e-3 on a weight is no longer small; rescale the last encoder
    // layer to unit spread.
    let z = model.embed(&x)?;
    let mean = fuzzy::mean_embedding(&z);
    let spread = (0..z.batch())
        .map(|i| z.row(i).iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if spread > 0.0 {
        let mut params = model.encoder.params_mut();
        let k = params.len();
        for t in &mut params[k - 2..] {
            t.scale(1.0 / spread);
        }
    }
    let z = model.embed(&x)?;
    let state = cluster_state_for(&mut rng, &z);
    model.cluster = Some(state);
    let target = probabilities(&mut rng, ds.len());
    Ok((model, x, labels, target))
}

fn check_model<G, L>(name: &str, model: &MmrModel, rng: &mut ChaCha8Rng, grads: G, value: L) -> Result<Check>
where
    G: Fn(&MmrModel) -> Result<Vec<Tensor>>,
    L: Fn(&MmrModel) -> Result<f64>,
{
    let analytic = grads(model)?;
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    let mut work = model.clone();
    let count = analytic.len();
    for k in 0..count {
        let p0 = work.all_params_mut()[k].clone();
        let idx = sample_coords(rng, p0.len(), MODEL_COORDS);
        coords += idx.len();
        worst = worst.max(probe(&p0, &analytic[k], &idx, |pp| {
            *work.all_params_mut()[k] = pp.clone();
            value(&work)
        })?);
        *work.all_params_mut()[k] = p0;
    }
    Ok(Check {
        name: name.into(),
        max_rel_err: worst,
        coords,
    })
}

/// The classification-module objective (unweighted and penalized), the
/// clustering-module objective and the baseline cross-entropy, through
/// every parameter of both architectures.
pub fn model_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let mut out = Vec::new();
    for (arch_name, arch) in [("conv", Architecture::Conv), ("dense", Architecture::Dense { hidden: 6 })] {
        let (model, x, labels, target) = model_fixture(seed, arch)?;
        let weights: Vec<f64> = (0..x.batch()).map(|i| if i % 2 == 0 { 3.0 } else { 1.0 }).collect();
        let flat = |g: crate::model::ModelGrads| g.flat().into_iter().cloned().collect::<Vec<_>>();
        out.push(check_model(
            &format!("objective classification module ({arch_name})"),
            &model,
            &mut rng,
            |m| Ok(flat(m.classification_grads(&x, &labels, None)?.1)),
            |m| Ok(m.classification_module_loss(&x, &labels, None)?.total),
        )?);
        out.push(check_model(
            &format!("objective penalized ({arch_name})"),
            &model,
            &mut rng,
            |m| Ok(flat(m.classification_grads(&x, &labels, Some(&weights))?.1)),
            |m| Ok(m.penalized_classification_loss(&x, &labels, &weights)?.total),
        )?);
        out.push(check_model(
            &format!("objective clustering module ({arch_name})"),
            &model,
            &mut rng,
            |m| Ok(flat(m.clustering_grads(&x, &target)?.1)),
            |m| Ok(m.clustering_module_loss(&x, &target)?.total),
        )?);
        out.push(check_model(
            &format!("objective baseline ({arch_name})"),
            &model,
            &mut rng,
            |m| Ok(flat(m.baseline_grads(&x, &labels)?.1)),
            |m| Ok(m.baseline_loss(&x, &labels)?.total),
        )?);
    }
    Ok(out)
}

/// All checks for one seed.
pub fn all_checks(seed: u64) -> Result<Vec<Check>> {
    let mut out = layer_checks(seed)?;
    out.extend(head_checks(seed)?);
    out.extend(model_checks(seed)?);
    Ok(out)
}
