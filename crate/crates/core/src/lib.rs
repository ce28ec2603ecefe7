//! Scaling-law toolkit for sparse Mixture-of-Experts language models.
//!
//! * [`model`] and [`flops`]: parameter and FLOP accounting from architecture configs.
//! * [`runs`]: training-run tables.
//! * [`surface`]: isoFLOP polynomial surfaces over (size, sparsity).
//! * [`frontier`]: compute-optimal size and sparsity extraction.
//! * [`law`]: the sparsity-aware parametric loss law and its robust fit.
//! * [`synth`]: ground-truth synthetic run generation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod error;
pub mod flops;
pub mod frontier;
pub mod law;
pub mod lstsq;
pub mod model;
pub mod optim;
pub mod rng;
pub mod runs;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
