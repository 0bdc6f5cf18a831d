use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

use super::gemm::{gemm, Mat, Patch};

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

/// Fully connected layer. `weight` is stored `[in, out]` so the forward pass
/// is a row of axpy updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// 2-D convolution over `[batch, channels, height, width]` with a square
/// kernel. `weight` is `[out_channels, in_channels, k, k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// Transposed 2-D convolution. `weight` is `[in_channels, out_channels, k, k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    Activation(ActivationKind),
    /// Row-wise softmax over the last axis of a `[batch, classes]` input.
    Softmax,
    /// Collapses everything after the batch axis.
    Flatten,
    /// Reshapes every batch entry to the given per-sample shape.
    Reshape(Vec<usize>),
}

fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

impl Layer {
    pub fn dense<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / math::sqrt(inputs as f64);
        Layer::Dense(Dense {
            weight: uniform_tensor(rng, &[inputs, outputs], bound),
            bias: uniform_tensor(rng, &[outputs], bound),
        })
    }

    pub fn conv2d<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / math::sqrt((in_channels * kernel * kernel) as f64);
        Layer::Conv2d(Conv2d {
            weight: uniform_tensor(rng, &[out_channels, in_channels, kernel, kernel], bound),
            bias: uniform_tensor(rng, &[out_channels], bound),
            stride,
            padding,
        })
    }

    pub fn conv_transpose2d<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / math::sqrt((out_channels * kernel * kernel) as f64);
        Layer::ConvTranspose2d(ConvTranspose2d {
            weight: uniform_tensor(rng, &[in_channels, out_channels, kernel, kernel], bound),
            bias: uniform_tensor(rng, &[out_channels], bound),
            stride,
            padding,
            output_padding,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::ConvTranspose2d(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvTranspose2d(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_tensor_count(&self) -> usize {
        match self {
            Layer::Dense(_) | Layer::Conv2d(_) | Layer::ConvTranspose2d(_) => 2,
            _ => 0,
        }
    }

    /// Output shape (batch axis included) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(l) => {
                let (fan_in, fan_out) = (l.weight.shape()[0], l.weight.shape()[1]);
                if input.len() != 2 || input[1] != fan_in {
                    return Err(Error::shape("dense", &[input[0], fan_in], input));
                }
                Ok(vec![input[0], fan_out])
            }
            Layer::Conv2d(l) => {
                let w = l.weight.shape();
                let (cout, cin, k) = (w[0], w[1], w[2]);
                if input.len() != 4 || input[1] != cin {
                    return Err(Error::shape("conv2d", &[input[0], cin, 0, 0], input));
                }
                let out = |n: usize| -> Option<usize> {
                    let padded = n + 2 * l.padding;
                    (padded >= k).then(|| (padded - k) / l.stride + 1)
                };
                match (out(input[2]), out(input[3])) {
                    (Some(h), Some(wd)) => Ok(vec![input[0], cout, h, wd]),
                    _ => Err(Error::shape("conv2d", &[input[0], cin, k, k], input)),
                }
            }
            Layer::ConvTranspose2d(l) => {
                let w = l.weight.shape();
                let (cin, cout, k) = (w[0], w[1], w[2]);
                if input.len() != 4 || input[1] != cin {
                    return Err(Error::shape("conv_transpose2d", &[input[0], cin, 0, 0], input));
                }
                let out = |n: usize| -> Option<usize> {
                    ((n - 1) * l.stride + k + l.output_padding).checked_sub(2 * l.padding)
                };
                match (out(input[2]), out(input[3])) {
                    (Some(h), Some(wd)) if h > 0 && wd > 0 => Ok(vec![input[0], cout, h, wd]),
                    _ => Err(Error::shape("conv_transpose2d", &[input[0], cin, k, k], input)),
                }
            }
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::Softmax => {
                if input.len() != 2 {
                    return Err(Error::shape("softmax", &[input[0], 0], input));
                }
                Ok(input.to_vec())
            }
            Layer::Flatten => Ok(vec![input[0], input[1..].iter().product()]),
            Layer::Reshape(target) => {
                let have: usize = input[1..].iter().product();
                let want: usize = target.iter().product();
                if have != want {
                    return Err(Error::shape("reshape", target, &input[1..]));
                }
                let mut s = vec![input[0]];
                s.extend_from_slice(target);
                Ok(s)
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let out = match self {
            Layer::Dense(l) => dense_forward(l, x, &out_shape),
            Layer::Conv2d(l) => conv_forward(l, x, &out_shape),
            Layer::ConvTranspose2d(l) => conv_t_forward(l, x, &out_shape),
            Layer::Activation(kind) => {
                let mut y = x.clone();
                for v in y.data_mut() {
                    *v = activate(*kind, *v);
                }
                y
            }
            Layer::Softmax => {
                let mut y = x.clone();
                for b in 0..y.batch() {
                    softmax_in_place(y.row_mut(b));
                }
                y
            }
            Layer::Flatten | Layer::Reshape(_) => x.clone().reshape(&out_shape)?,
        };
        Ok(out)
    }

    /// Vector-Jacobian product. `x`/`y` are this layer's input and output from
    /// the forward pass, `gy` the upstream gradient. Parameter gradients are
    /// accumulated into `grads` (one slot per parameter tensor).
    pub fn backward(&self, x: &Tensor, y: &Tensor, gy: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        if gy.shape() != y.shape() {
            return Err(Error::shape("backward", y.shape(), gy.shape()));
        }
        if grads.len() != self.param_tensor_count() {
            return Err(Error::shape(
                "backward.grads",
                &[self.param_tensor_count()],
                &[grads.len()],
            ));
        }
        let gx = match self {
            Layer::Dense(l) => {
                let (gw, rest) = grads.split_at_mut(1);
                dense_backward(l, x, gy, &mut gw[0], &mut rest[0])
            }
            Layer::Conv2d(l) => {
                let (gw, rest) = grads.split_at_mut(1);
                conv_backward(l, x, gy, &mut gw[0], &mut rest[0])
            }
            Layer::ConvTranspose2d(l) => {
                let (gw, rest) = grads.split_at_mut(1);
                conv_t_backward(l, x, gy, &mut gw[0], &mut rest[0])
            }
            Layer::Activation(kind) => {
                let mut gx = gy.clone();
                for ((g, &xv), &yv) in gx.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *g *= activation_derivative(*kind, xv, yv);
                }
                gx
            }
            Layer::Softmax => {
                let mut gx = gy.clone();
                for b in 0..y.batch() {
                    let yr = y.row(b);
                    let gr = gy.row(b);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, g)| a * g).sum();
                    for ((o, &yv), &gv) in gx.row_mut(b).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                gx
            }
            Layer::Flatten | Layer::Reshape(_) => gy.clone().reshape(x.shape())?,
        };
        Ok(gx)
    }
}

#[inline]
pub(crate) fn activate(kind: ActivationKind, v: f64) -> f64 {
    match kind {
        ActivationKind::Identity => v,
        ActivationKind::Relu => v.max(0.0),
        ActivationKind::LeakyRelu => {
            if v > 0.0 {
                v
            } else {
                LEAKY_SLOPE * v
            }
        }
        ActivationKind::Tanh => math::tanh(v),
        ActivationKind::Sigmoid => 1.0 / (1.0 + math::exp(-v)),
    }
}

#[inline]
fn activation_derivative(kind: ActivationKind, x: f64, y: f64) -> f64 {
    match kind {
        ActivationKind::Identity => 1.0,
        ActivationKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::LeakyRelu => {
            if x > 0.0 {
                1.0
            } else {
                LEAKY_SLOPE
            }
        }
        ActivationKind::Tanh => 1.0 - y * y,
        ActivationKind::Sigmoid => y * (1.0 - y),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn dense_forward(l: &Dense, x: &Tensor, out_shape: &[usize]) -> Tensor {
    let (fan_in, fan_out) = (l.weight.shape()[0], l.weight.shape()[1]);
    let mut y = Tensor::zeros(out_shape);
    for b in 0..x.batch() {
        y.row_mut(b).copy_from_slice(l.bias.data());
    }
    gemm(
        Mat::rm(x.data(), x.batch(), fan_in),
        Mat::rm(l.weight.data(), fan_in, fan_out),
        1.0,
        y.data_mut(),
    );
    y
}

fn dense_backward(l: &Dense, x: &Tensor, gy: &Tensor, gw: &mut Tensor, gb: &mut Tensor) -> Tensor {
    let (fan_in, fan_out) = (l.weight.shape()[0], l.weight.shape()[1]);
    let n = x.batch();
    for b in 0..n {
        for (acc, g) in gb.data_mut().iter_mut().zip(gy.row(b)) {
            *acc += g;
        }
    }
    let xm = Mat::rm(x.data(), n, fan_in);
    let gym = Mat::rm(gy.data(), n, fan_out);
    gemm(xm.t(), gym, 1.0, gw.data_mut());
    let mut gx = Tensor::zeros(x.shape());
    gemm(gym, Mat::rm(l.weight.data(), fan_in, fan_out).t(), 0.0, gx.data_mut());
    gx
}

/// Patch geometry with `x` as the big side (ordinary convolution).
fn conv_patch(l: &Conv2d, x: &[usize], y: &[usize]) -> Patch {
    Patch {
        channels: x[1],
        big_h: x[2],
        big_w: x[3],
        small_h: y[2],
        small_w: y[3],
        k: l.weight.shape()[2],
        stride: l.stride,
        padding: l.padding,
    }
}

/// Patch geometry with `y` as the big side (transposed convolution).
fn conv_t_patch(l: &ConvTranspose2d, x: &[usize], y: &[usize]) -> Patch {
    Patch {
        channels: y[1],
        big_h: y[2],
        big_w: y[3],
        small_h: x[2],
        small_w: x[3],
        k: l.weight.shape()[2],
        stride: l.stride,
        padding: l.padding,
    }
}

fn add_channel_bias(y: &mut Tensor, bias: &[f64]) {
    let plane = y.shape()[2] * y.shape()[3];
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let bv = bias[i % bias.len()];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
}

fn accumulate_channel_bias(gy: &Tensor, gb: &mut Tensor) {
    let plane = gy.shape()[2] * gy.shape()[3];
    let c = gb.len();
    for (i, chunk) in gy.data().chunks(plane).enumerate() {
        gb.data_mut()[i % c] += chunk.iter().sum::<f64>();
    }
}

fn conv_forward(l: &Conv2d, x: &Tensor, out_shape: &[usize]) -> Tensor {
    let g = conv_patch(l, x.shape(), out_shape);
    let cout = out_shape[1];
    let (in_len, out_len) = (x.row_len(), cout * g.cols());
    let w = Mat::rm(l.weight.data(), cout, g.rows());
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let mut y = Tensor::zeros(out_shape);
    for b in 0..x.batch() {
        g.im2col(&x.data()[b * in_len..][..in_len], &mut cols);
        gemm(w, Mat::rm(&cols, g.rows(), g.cols()), 0.0, &mut y.data_mut()[b * out_len..][..out_len]);
    }
    add_channel_bias(&mut y, l.bias.data());
    y
}

fn conv_backward(l: &Conv2d, x: &Tensor, gy: &Tensor, gw: &mut Tensor, gb: &mut Tensor) -> Tensor {
    let g = conv_patch(l, x.shape(), gy.shape());
    let cout = gy.shape()[1];
    let (in_len, out_len) = (x.row_len(), cout * g.cols());
    let w = Mat::rm(l.weight.data(), cout, g.rows());
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let mut gcols = vec![0.0; g.rows() * g.cols()];
    let mut gx = Tensor::zeros(x.shape());
    accumulate_channel_bias(gy, gb);
    for b in 0..x.batch() {
        let gyb = Mat::rm(&gy.data()[b * out_len..][..out_len], cout, g.cols());
        g.im2col(&x.data()[b * in_len..][..in_len], &mut cols);
        gemm(gyb, Mat::rm(&cols, g.rows(), g.cols()).t(), 1.0, gw.data_mut());
        gemm(w.t(), gyb, 0.0, &mut gcols);
        g.col2im(&gcols, &mut gx.data_mut()[b * in_len..][..in_len]);
    }
    gx
}

fn conv_t_forward(l: &ConvTranspose2d, x: &Tensor, out_shape: &[usize]) -> Tensor {
    let g = conv_t_patch(l, x.shape(), out_shape);
    let cin = x.shape()[1];
    let (in_len, out_len) = (x.row_len(), out_shape[1..].iter().product::<usize>());
    let w = Mat::rm(l.weight.data(), cin, g.rows());
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let mut y = Tensor::zeros(out_shape);
    for b in 0..x.batch() {
        let xb = Mat::rm(&x.data()[b * in_len..][..in_len], cin, g.cols());
        gemm(w.t(), xb, 0.0, &mut cols);
        g.col2im(&cols, &mut y.data_mut()[b * out_len..][..out_len]);
    }
    add_channel_bias(&mut y, l.bias.data());
    y
}

fn conv_t_backward(l: &ConvTranspose2d, x: &Tensor, gy: &Tensor, gw: &mut Tensor, gb: &mut Tensor) -> Tensor {
    let g = conv_t_patch(l, x.shape(), gy.shape());
    let cin = x.shape()[1];
    let (in_len, out_len) = (x.row_len(), gy.row_len());
    let w = Mat::rm(l.weight.data(), cin, g.rows());
    let mut gcols = vec![0.0; g.rows() * g.cols()];
    let mut gx = Tensor::zeros(x.shape());
    accumulate_channel_bias(gy, gb);
    for b in 0..x.batch() {
        g.im2col(&gy.data()[b * out_len..][..out_len], &mut gcols);
        let gc = Mat::rm(&gcols, g.rows(), g.cols());
        let xb = Mat::rm(&x.data()[b * in_len..][..in_len], cin, g.cols());
        gemm(xb, gc.t(), 1.0, gw.data_mut());
        gemm(w, gc, 0.0, &mut gx.data_mut()[b * in_len..][..in_len]);
    }
    gx
}
