//! Scalar loss heads. Each returns the loss value together with its gradient
//! with respect to the prediction tensor it was evaluated on.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

use super::sequential::{Sequential, Trace};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// A loss value and its gradient with respect to the network output.
#[derive(Clone, Debug)]
pub struct LossHead {
    pub value: Tensor,
    pub grad: Tensor,
}

impl LossHead {
    pub fn scalar(value: f64, grad: Tensor) -> Self {
        Self {
            value: Tensor::scalar(value),
            grad,
        }
    }

    pub fn loss(&self) -> f64 {
        self.value.data()[0]
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub input: Tensor,
    pub params: Vec<Tensor>,
}

/// Reverse pass from a scalar loss through a recorded forward trace.
pub fn backward(net: &Sequential, trace: &Trace, head: &LossHead) -> Result<Gradients> {
    if head.value.len() != 1 {
        return Err(Error::NonScalarLoss(head.value.shape().to_vec()));
    }
    if head.grad.shape() != trace.output().shape() {
        return Err(Error::shape("backward", trace.output().shape(), head.grad.shape()));
    }
    let (input, params) = net.backward(trace, &head.grad)?;
    Ok(Gradients { input, params })
}

#[inline]
pub(crate) fn clamped_ln(p: f64) -> f64 {
    math::ln(p.clamp(PROB_FLOOR, 1.0))
}

/// Soft-target cross-entropy `-(1/N) Σ_i w_i Σ_c y_ic ln p_ic` over
/// `[N, C]` probabilities. Weights default to one.
pub fn cross_entropy(probs: &Tensor, targets: &Tensor, weights: Option<&[f64]>) -> Result<LossHead> {
    if probs.shape() != targets.shape() || probs.shape().len() != 2 {
        return Err(Error::shape("cross_entropy", probs.shape(), targets.shape()));
    }
    let n = probs.batch();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::shape("cross_entropy.weights", &[n], &[w.len()]));
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Tensor::zeros(probs.shape());
    for i in 0..n {
        let wi = weights.map_or(1.0, |w| w[i]);
        let (p, y) = (probs.row(i), targets.row(i));
        let g = grad.row_mut(i);
        for c in 0..p.len() {
            value -= wi * y[c] * clamped_ln(p[c]);
            if p[c] >= PROB_FLOOR && p[c] <= 1.0 {
                g[c] = -wi * y[c] * inv_n / p[c];
            }
        }
    }
    Ok(LossHead::scalar(value * inv_n, grad))
}

/// Unreduced per-row cross-entropy `-Σ_c y_ic ln p_ic`.
pub fn per_row_cross_entropy(probs: &Tensor, targets: &Tensor) -> Result<Vec<f64>> {
    if probs.shape() != targets.shape() || probs.shape().len() != 2 {
        return Err(Error::shape("per_row_cross_entropy", probs.shape(), targets.shape()));
    }
    Ok((0..probs.batch())
        .map(|i| {
            probs
                .row(i)
                .iter()
                .zip(targets.row(i))
                .map(|(&p, &y)| -y * clamped_ln(p))
                .sum()
        })
        .collect())
}

/// `(1/N) Σ_i ‖x_i − x̂_i‖²`: summed over feature elements, averaged over
/// the leading axis only.
pub fn reconstruction(pred: &Tensor, target: &Tensor) -> Result<LossHead> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("reconstruction", target.shape(), pred.shape()));
    }
    let inv_n = 1.0 / pred.batch() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut value = 0.0;
    for ((g, &p), &x) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let r = p - x;
        value += r * r;
        *g = 2.0 * r * inv_n;
    }
    Ok(LossHead::scalar(value * inv_n, grad))
}

/// Row-averaged KL divergence `(1/N) Σ_i Σ_j q_ij ln(q_ij / p_ij)` with the
/// target treated as constant. The flag reports whether any target entry
/// was clamped while the matching `q` was positive.
pub fn kl_divergence(q: &Tensor, target: &Tensor) -> Result<(LossHead, bool)> {
    if q.shape() != target.shape() || q.shape().len() != 2 {
        return Err(Error::shape("kl_divergence", target.shape(), q.shape()));
    }
    let inv_n = 1.0 / q.batch() as f64;
    let mut grad = Tensor::zeros(q.shape());
    let mut value = 0.0;
    let mut clamped = false;
    for ((g, &qv), &pv) in grad.data_mut().iter_mut().zip(q.data()).zip(target.data()) {
        if qv > 0.0 && pv < PROB_FLOOR {
            clamped = true;
        }
        let log_ratio = clamped_ln(qv) - clamped_ln(pv);
        if qv > 0.0 {
            value += qv * log_ratio;
        }
        *g = (log_ratio + 1.0) * inv_n;
    }
    Ok((LossHead::scalar(value * inv_n, grad), clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Sequential};
    use alloc::vec;

    fn t(shape: &[usize], d: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        // loss = Σ w ⊙ x through a bias-free dense layer with one output.
        let x = t(&[1, 3], &[0.5, -1.0, 2.0]);
        let net = Sequential::new(vec![Layer::Dense(crate::nn::Dense {
            weight: t(&[3, 1], &[0.1, 0.2, 0.3]),
            bias: t(&[1], &[0.0]),
        })]);
        let trace = net.forward_trace(&x).unwrap();
        let value = trace.output().data()[0];
        let head = LossHead::scalar(value, t(&[1, 1], &[1.0]));
        let g = backward(&net, &trace, &head).unwrap();
        assert_eq!(g.params[0].data(), x.data());
        assert_eq!(g.params[1].data(), &[1.0]);
    }

    #[test]
    fn softmax_cross_entropy_at_uniform_prediction() {
        let net = Sequential::new(vec![Layer::Softmax]);
        let logits = t(&[1, 2], &[0.0, 0.0]);
        let trace = net.forward_trace(&logits).unwrap();
        let head = cross_entropy(trace.output(), &t(&[1, 2], &[1.0, 0.0]), None).unwrap();
        assert!((head.loss() - core::f64::consts::LN_2).abs() < 1e-15);
        let g = backward(&net, &trace, &head).unwrap();
        assert!((g.input.data()[0] + 0.5).abs() < 1e-15);
        assert!((g.input.data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let net = Sequential::new(vec![Layer::Softmax]);
        let trace = net.forward_trace(&t(&[1, 2], &[0.0, 1.0])).unwrap();
        let head = LossHead {
            value: t(&[2], &[1.0, 1.0]),
            grad: t(&[1, 2], &[1.0, 1.0]),
        };
        assert!(matches!(backward(&net, &trace, &head), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let one_hot = t(&[1, 2], &[1.0, 0.0]);
        assert!(cross_entropy(&one_hot, &one_hot, None).unwrap().loss().abs() < 1e-15);
        let uniform = t(&[1, 2], &[0.5, 0.5]);
        let ln2 = core::f64::consts::LN_2;
        assert!((cross_entropy(&uniform, &one_hot, None).unwrap().loss() - ln2).abs() < 1e-15);
        assert!((cross_entropy(&uniform, &uniform, None).unwrap().loss() - ln2).abs() < 1e-15);
        // A zero probability on the labelled class stays finite.
        let l = cross_entropy(&t(&[1, 2], &[0.0, 1.0]), &one_hot, None).unwrap();
        assert!(l.loss().is_finite());
        assert!((l.loss() - 12.0 * core::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn reconstruction_residual_arithmetic() {
        let target = t(&[1, 4], &[0.0; 4]);
        let pred = t(&[1, 4], &[3.0, 4.0, 0.0, 0.0]);
        assert_eq!(reconstruction(&pred, &target).unwrap().loss(), 25.0);
        assert_eq!(reconstruction(&target, &target).unwrap().loss(), 0.0);
    }

    #[test]
    fn kl_values() {
        let q = t(&[1, 2], &[0.3, 0.7]);
        assert!(kl_divergence(&q, &q).unwrap().0.loss().abs() < 1e-15);
        let (h, clamped) = kl_divergence(&t(&[1, 2], &[1.0, 0.0]), &t(&[1, 2], &[0.5, 0.5])).unwrap();
        assert!((h.loss() - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(!clamped);
        let (h, clamped) = kl_divergence(&t(&[1, 2], &[0.5, 0.5]), &t(&[1, 2], &[1.0, 0.0])).unwrap();
        assert!(clamped);
        assert!(h.loss().is_finite());
    }
}
