//! Minimal differentiable building blocks: layers with hand-written
//! vector-Jacobian products, loss heads, and Adam.

mod adam;
mod gemm;
mod layer;
pub mod loss;
mod sequential;

pub use adam::{AdamConfig, AdamState};
pub use layer::{ActivationKind, Conv2d, ConvTranspose2d, Dense, Layer};
pub use loss::{backward, Gradients, LossHead};
pub use sequential::{Sequential, Trace};

