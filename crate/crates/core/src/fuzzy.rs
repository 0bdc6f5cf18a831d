//! Two-cluster fuzzy clustering over embeddings.
//!
//! The membership rule compares each sample's squared distance to a center
//! against that center's squared distance from the global embedding mean:
//!
//! ```text
//! base_ij = ‖z_i − μ_j‖² − ‖μ_j − μ̄‖²
//! q_ij    ∝ max(base_ij, δ)^(−1/(m−1))
//! μ_j     = Σ_i q_ij^m z_i / Σ_i q_ij^m
//! ```
//!
//! The same membership function is the forward pass of the clustering layer
//! used during training; [`assignment_backward`] is its vector-Jacobian
//! product with the global mean held fixed.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Nonpositive membership bases are clamped to this before the power.
pub const BASE_FLOOR: f64 = 1e-8;
/// Minimum separation between the two centers after initialization.
pub const MIN_CENTER_GAP: f64 = 1e-8;
const EMPTY_CLUSTER_MASS: f64 = 1e-12;
const FREQ_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    /// `[2, Z_e]`.
    pub centers: Tensor,
    /// Global embedding mean μ̄ (length `Z_e`).
    pub mean: Vec<f64>,
    pub fuzzifier: f64,
}

impl ClusterState {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, z: &Tensor) -> Result<()> {
        let d = self.dim();
        if z.shape().len() != 2 || z.shape()[1] != d || self.centers.shape() != [2, d] {
            return Err(Error::shape("cluster_state", &[z.batch(), d], z.shape()));
        }
        if !(self.fuzzifier > 1.0) {
            return Err(Error::Config("fuzzifier must exceed 1".into()));
        }
        Ok(())
    }
}

/// Soft assignments and, once computed, the sharpened target distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignments {
    pub q: Tensor,
    pub target: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separation {
    pub intra: f64,
    pub inter: f64,
    /// `intra − inter`.
    pub objective: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn mean_embedding(z: &Tensor) -> Vec<f64> {
    let mut mean = vec![0.0; z.row_len()];
    for i in 0..z.batch() {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    let inv = 1.0 / z.batch() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Scalar-trace form of the inter/intra separation terms and their
/// difference.
pub fn separation_objective(z: &Tensor, state: &ClusterState, q: &Tensor) -> Result<Separation> {
    state.check(z)?;
    if q.shape() != [z.batch(), 2] {
        return Err(Error::shape("separation_objective", &[z.batch(), 2], q.shape()));
    }
    let m = state.fuzzifier;
    let (mut intra, mut inter) = (0.0, 0.0);
    for i in 0..z.batch() {
        let zi = z.row(i);
        let to_mean = sq_dist(zi, &state.mean);
        for j in 0..2 {
            let w = math::powf(q.row(i)[j], m);
            inter += w * to_mean;
            intra += w * sq_dist(zi, state.centers.row(j));
        }
    }
    let inv = 1.0 / z.batch() as f64;
    let (intra, inter) = (intra * inv, inter * inv);
    Ok(Separation {
        intra,
        inter,
        objective: intra - inter,
    })
}

#[inline]
fn bases(zi: &[f64], state: &ClusterState) -> [f64; 2] {
    let mut b = [0.0; 2];
    for (j, bj) in b.iter_mut().enumerate() {
        let mu = state.centers.row(j);
        *bj = sq_dist(zi, mu) - sq_dist(mu, &state.mean);
    }
    b
}

#[inline]
fn memberships(b: [f64; 2], m: f64) -> [f64; 2] {
    let e = -1.0 / (m - 1.0);
    let b0 = b[0].max(BASE_FLOOR);
    let b1 = b[1].max(BASE_FLOOR);
    // Normalize by the smaller base so the larger power never overflows.
    let lo = b0.min(b1);
    let u0 = math::powf(b0 / lo, e);
    let u1 = math::powf(b1 / lo, e);
    let s = u0 + u1;
    [u0 / s, u1 / s]
}

/// Soft cluster assignment of every embedding row; also the clustering
/// layer's forward pass.
pub fn update_assignments(z: &Tensor, state: &ClusterState) -> Result<Tensor> {
    state.check(z)?;
    let mut q = Tensor::zeros(&[z.batch(), 2]);
    for i in 0..z.batch() {
        let row = memberships(bases(z.row(i), state), state.fuzzifier);
        q.row_mut(i).copy_from_slice(&row);
    }
    Ok(q)
}

/// Vector-Jacobian product of [`update_assignments`]. Returns gradients with
/// respect to the embeddings and the centers; μ̄ is treated as a constant.
pub fn assignment_backward(
    z: &Tensor,
    state: &ClusterState,
    grad_q: &Tensor,
) -> Result<(Tensor, Tensor)> {
    state.check(z)?;
    if grad_q.shape() != [z.batch(), 2] {
        return Err(Error::shape("assignment_backward", &[z.batch(), 2], grad_q.shape()));
    }
    let d = state.dim();
    let scale = 1.0 / (state.fuzzifier - 1.0);
    let mut gz = Tensor::zeros(z.shape());
    let mut gc = Tensor::zeros(&[2, d]);
    for i in 0..z.batch() {
        let zi = z.row(i);
        let b = bases(zi, state);
        let q = memberships(b, state.fuzzifier);
        let g = grad_q.row(i);
        let gbar = g[0] * q[0] + g[1] * q[1];
        let mut gb = [0.0; 2];
        for j in 0..2 {
            if b[j] > BASE_FLOOR {
                gb[j] = -scale * q[j] * (g[j] - gbar) / b[j];
            }
        }
        let gzi = gz.row_mut(i);
        for j in 0..2 {
            if gb[j] == 0.0 {
                continue;
            }
            let mu = state.centers.row(j);
            for k in 0..d {
                gzi[k] += 2.0 * gb[j] * (zi[k] - mu[k]);
            }
        }
        for j in 0..2 {
            if gb[j] == 0.0 {
                continue;
            }
            let gcj = gc.row_mut(j);
            for k in 0..d {
                gcj[k] -= 2.0 * gb[j] * (zi[k] - state.mean[k]);
            }
        }
    }
    Ok((gz, gc))
}

fn farthest_from(z: &Tensor, point: &[f64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..z.batch() {
        let d = sq_dist(z.row(i), point);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Places center `j` on the sample farthest from the other center, nudging
/// it off when even that sample coincides with the other center.
fn reseed(z: &Tensor, centers: &mut Tensor, j: usize) {
    let other = centers.row(1 - j).to_vec();
    let far = farthest_from(z, &other);
    let mut c = z.row(far).to_vec();
    if sq_dist(&c, &other) <= MIN_CENTER_GAP * MIN_CENTER_GAP {
        c = other.clone();
        let nudge = 1e-4 * (1.0 + c[0].abs());
        c[0] += if j == 0 { -nudge } else { nudge };
    }
    centers.row_mut(j).copy_from_slice(&c);
}

/// Weighted-mean center update. Returns the new centers and whether an
/// empty cluster had to be re-seeded.
pub fn update_centers(z: &Tensor, q: &Tensor, m: f64) -> Result<(Tensor, bool)> {
    if q.shape() != [z.batch(), 2] {
        return Err(Error::shape("update_centers", &[z.batch(), 2], q.shape()));
    }
    let d = z.row_len();
    let mut centers = Tensor::zeros(&[2, d]);
    let mut mass = [0.0; 2];
    for i in 0..z.batch() {
        let zi = z.row(i);
        for j in 0..2 {
            let w = math::powf(q.row(i)[j], m);
            mass[j] += w;
            for (c, v) in centers.row_mut(j).iter_mut().zip(zi) {
                *c += w * v;
            }
        }
    }
    let mut empty = [false; 2];
    for j in 0..2 {
        if mass[j] < EMPTY_CLUSTER_MASS {
            empty[j] = true;
        } else {
            let inv = 1.0 / mass[j];
            centers.row_mut(j).iter_mut().for_each(|c| *c *= inv);
        }
    }
    match empty {
        [true, true] => {
            let mean = mean_embedding(z);
            centers.row_mut(1).copy_from_slice(&mean);
            reseed(z, &mut centers, 0);
        }
        [true, false] => reseed(z, &mut centers, 0),
        [false, true] => reseed(z, &mut centers, 1),
        [false, false] => {}
    }
    Ok((centers, empty[0] || empty[1]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitOutcome {
    pub state: ClusterState,
    pub q: Tensor,
    pub iterations: usize,
    pub converged: bool,
    /// True if any center was re-seeded along the way.
    pub reseeded: bool,
    /// Separation objective after every assignment step.
    pub objective_trace: Vec<f64>,
}

/// Alternates assignment and center updates until the separation objective
/// changes by less than `tol` or `max_iter` rounds have run.
///
/// Seeds deterministically: the first center is the sample farthest from the
/// mean, the second the sample farthest from the first. On non-convergence
/// the lowest-objective state seen is returned with `converged = false`.
pub fn init_centers(z: &Tensor, m: f64, max_iter: usize, tol: f64) -> Result<InitOutcome> {
    if z.shape().len() != 2 || z.batch() < 2 {
        return Err(Error::shape("init_centers", &[2, z.row_len()], z.shape()));
    }
    if !(m > 1.0) {
        return Err(Error::Config("fuzzifier must exceed 1".into()));
    }
    let mean = mean_embedding(z);
    let d = z.row_len();
    let mut centers = Tensor::zeros(&[2, d]);
    let first = farthest_from(z, &mean);
    centers.row_mut(0).copy_from_slice(z.row(first));
    let second = farthest_from(z, z.row(first));
    centers.row_mut(1).copy_from_slice(z.row(second));
    let mut reseeded = false;
    if sq_dist(centers.row(0), centers.row(1)) <= MIN_CENTER_GAP * MIN_CENTER_GAP {
        reseed(z, &mut centers, 1);
        reseeded = true;
    }
    let state = ClusterState {
        centers,
        mean,
        fuzzifier: m,
    };
    let mut out = refine_centers(z, state, max_iter, tol)?;
    out.reseeded |= reseeded;
    Ok(out)
}

/// Runs the assignment/center alternation of [`init_centers`] from the
/// given state, keeping its global mean.
pub fn refine_centers(z: &Tensor, mut state: ClusterState, max_iter: usize, tol: f64) -> Result<InitOutcome> {
    let m = state.fuzzifier;
    let mut reseeded = false;
    let mut trace = Vec::new();
    let mut best: Option<(f64, ClusterState, Tensor)> = None;
    let mut prev = f64::INFINITY;
    for it in 1..=max_iter.max(1) {
        let q = update_assignments(z, &state)?;
        let obj = separation_objective(z, &state, &q)?.objective;
        trace.push(obj);
        if best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, state.clone(), q.clone()));
        }
        if (prev - obj).abs() < tol {
            return Ok(InitOutcome {
                state,
                q,
                iterations: it,
                converged: true,
                reseeded,
                objective_trace: trace,
            });
        }
        prev = obj;
        let (next, re) = update_centers(z, &q, m)?;
        reseeded |= re;
        state.centers = next;
        if sq_dist(state.centers.row(0), state.centers.row(1)) <= MIN_CENTER_GAP * MIN_CENTER_GAP {
            reseed(z, &mut state.centers, 1);
            reseeded = true;
        }
    }
    let (_, state, q) = best.expect("at least one iteration");
    Ok(InitOutcome {
        state,
        q,
        iterations: max_iter.max(1),
        converged: false,
        reseeded,
        objective_trace: trace,
    })
}

/// Sharpened target `p_ij ∝ q_ij² / f_j` with cluster frequency
/// `f_j = Σ_i q_ij`. The flag reports a clamped (empty) frequency.
pub fn target_distribution(q: &Tensor) -> Result<(Tensor, bool)> {
    if q.shape().len() != 2 || q.shape()[1] != 2 {
        return Err(Error::shape("target_distribution", &[q.batch(), 2], q.shape()));
    }
    let mut f = [0.0; 2];
    for i in 0..q.batch() {
        f[0] += q.row(i)[0];
        f[1] += q.row(i)[1];
    }
    let clamped = f.iter().any(|&v| v < FREQ_FLOOR);
    let f = [f[0].max(FREQ_FLOOR), f[1].max(FREQ_FLOOR)];
    let mut p = Tensor::zeros(q.shape());
    for i in 0..q.batch() {
        let r = q.row(i);
        let w = [r[0] * r[0] / f[0], r[1] * r[1] / f[1]];
        let s = w[0] + w[1];
        let out = p.row_mut(i);
        if s > 0.0 {
            out[0] = w[0] / s;
            out[1] = w[1] / s;
        } else {
            out[0] = 0.5;
            out[1] = 0.5;
        }
    }
    Ok((p, clamped))
}

/// Maps cluster indices onto class indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAlignment {
    pub swapped: bool,
}

impl ClusterAlignment {
    #[inline]
    pub fn class_of(self, cluster: usize) -> usize {
        if self.swapped {
            1 - cluster
        } else {
            cluster
        }
    }

    /// Picks the permutation that agrees more often with `reference` class
    /// predictions; ties keep `self`.
    pub fn choose(self, clusters: &[usize], reference: &[usize]) -> ClusterAlignment {
        let same = clusters.iter().zip(reference).filter(|(c, r)| c == r).count();
        let crossed = clusters.len() - same;
        let identity_better = same > crossed;
        let swapped_better = crossed > same;
        if identity_better {
            ClusterAlignment { swapped: false }
        } else if swapped_better {
            ClusterAlignment { swapped: true }
        } else {
            self
        }
    }
}

/// Hard cluster index per row (ties to cluster 1).
pub fn hard_assignments(q: &Tensor) -> Vec<usize> {
    (0..q.batch())
        .map(|i| if q.row(i)[0] > q.row(i)[1] { 0 } else { 1 })
        .collect()
}
