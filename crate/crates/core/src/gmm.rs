//! Two-component 1-D Gaussian mixture fitted by EM, used to separate clean
//! (low-loss) from mislabelled (high-loss) samples.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const MAX_ITER: usize = 100;
pub const LL_TOL: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        math::ln(self.weight) - 0.5 * (LN_2PI + math::ln(self.variance) + d * d / self.variance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm1d {
    /// Sorted by mean; `components[1]` is the high-loss component.
    pub components: [Component; 2],
    /// Set when the input had no spread; `p_false` is then zero everywhere.
    pub degenerate: bool,
    pub iterations: usize,
    /// Total log-likelihood after initialization and after each EM step.
    pub log_likelihood: Vec<f64>,
}

impl Gmm1d {
    /// Posterior responsibility of the higher-mean component.
    pub fn p_false(&self, loss: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let [lo, hi] = self.components;
        let a = lo.log_density(loss);
        let b = hi.log_density(loss);
        // σ(b − a) evaluated on the stable side.
        if b >= a {
            1.0 / (1.0 + math::exp(a - b))
        } else {
            let e = math::exp(b - a);
            e / (1.0 + e)
        }
    }

    pub fn p_false_all(&self, losses: &[f64]) -> Vec<f64> {
        losses.iter().map(|&l| self.p_false(l)).collect()
    }
}

/// Linear-interpolated percentile of sorted data, `q ∈ [0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + math::ln(math::exp(a - m) + math::exp(b - m))
}

fn log_likelihood(c: &[Component; 2], xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| log_sum_exp(c[0].log_density(x), c[1].log_density(x)))
        .sum()
}

/// EM fit initialized at the 25th/75th percentiles with equal weights and the
/// pooled variance. Stops when the log-likelihood gain drops below
/// [`LL_TOL`] or after [`MAX_ITER`] steps.
pub fn fit_gmm(losses: &[f64]) -> Result<Gmm1d> {
    if losses.len() < 4 {
        return Err(Error::Config("fit_gmm needs at least 4 losses".into()));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::non_finite("fit_gmm input"));
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    if math::sqrt(var) <= 1e-9 * mean.abs().max(1e-12) {
        let c = Component {
            weight: 0.5,
            mean,
            variance: var.max(VARIANCE_FLOOR),
        };
        return Ok(Gmm1d {
            components: [c, c],
            degenerate: true,
            iterations: 0,
            log_likelihood: Vec::new(),
        });
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let v0 = var.max(VARIANCE_FLOOR);
    let mut c = [
        Component {
            weight: 0.5,
            mean: percentile(&sorted, 0.25),
            variance: v0,
        },
        Component {
            weight: 0.5,
            mean: percentile(&sorted, 0.75),
            variance: v0,
        },
    ];
    let mut trace = alloc::vec![log_likelihood(&c, losses)];
    let mut resp = alloc::vec![0.0; losses.len()];
    let mut iterations = 0;
    while iterations < MAX_ITER {
        for (r, &x) in resp.iter_mut().zip(losses) {
            let a = c[0].log_density(x);
            let b = c[1].log_density(x);
            *r = math::exp(b - log_sum_exp(a, b));
        }
        let mut next = c;
        for (k, comp) in next.iter_mut().enumerate() {
            let w = |r: f64| if k == 1 { r } else { 1.0 - r };
            let nk: f64 = resp.iter().map(|&r| w(r)).sum();
            if nk <= 0.0 {
                continue;
            }
            let mu = resp.iter().zip(losses).map(|(&r, &x)| w(r) * x).sum::<f64>() / nk;
            let v = resp
                .iter()
                .zip(losses)
                .map(|(&r, &x)| w(r) * (x - mu) * (x - mu))
                .sum::<f64>()
                / nk;
            *comp = Component {
                weight: nk / n,
                mean: mu,
                variance: v.max(VARIANCE_FLOOR),
            };
        }
        c = next;
        iterations += 1;
        let ll = log_likelihood(&c, losses);
        let gain = ll - trace[trace.len() - 1];
        trace.push(ll);
        if gain < LL_TOL {
            break;
        }
    }
    if c[0].mean > c[1].mean {
        c.swap(0, 1);
    }
    Ok(Gmm1d {
        components: c,
        degenerate: false,
        iterations,
        log_likelihood: trace,
    })
}
