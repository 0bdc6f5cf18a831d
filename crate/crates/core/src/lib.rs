//! Robust training under false-label injection.
//!
//! The crate alternates a supervised classification module (autoencoder plus
//! classifier) with an unsupervised fuzzy clustering module over the shared
//! embedding, and uses both to progressively correct contaminated training
//! labels. An optional human-in-the-loop plugin detects likely false labels
//! from per-sample losses with a two-component Gaussian mixture and routes a
//! small bi-directional selection of them to an annotator.
//!
//! Everything here is `no_std` (with `alloc`); file formats, the CLI, and the
//! annotation service live in the companion `mmr-lab` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is the NaN-rejecting form used by the validators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod attack;
pub mod data;
pub mod error;
pub mod fuzzy;
pub mod gmm;
pub mod gradcheck;
pub mod hil;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trainer;

mod math;

pub use error::{Error, Result};
pub use tensor::Tensor;
