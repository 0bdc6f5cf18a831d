use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;

use super::layer::Layer;

/// A feed-forward stack of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    layers: Vec<Layer>,
}

/// Activations recorded by [`Sequential::forward_trace`]; entry 0 is the input.
#[derive(Clone, Debug)]
pub struct Trace {
    activations: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for l in &self.layers {
            let next = l.forward(activations.last().unwrap())?;
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Backpropagates `grad_out` through the recorded trace. Returns the
    /// gradient with respect to the input and one gradient per parameter
    /// tensor, in [`Sequential::params`] order.
    pub fn backward(&self, trace: &Trace, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut grads = self.zero_grads();
        let gx = self.backward_into(trace, grad_out, &mut grads)?;
        Ok((gx, grads))
    }

    /// Like [`Sequential::backward`] but accumulates into existing buffers.
    pub fn backward_into(&self, trace: &Trace, grad_out: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_tensor_count();
        }
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let n = l.param_tensor_count();
            let slot = &mut grads[offsets[i]..offsets[i] + n];
            g = l.backward(&trace.activations[i], &trace.activations[i + 1], &g, slot)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
