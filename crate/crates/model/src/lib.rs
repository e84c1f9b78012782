//! LibTorch implementation of the networks, losses, training loop,
//! checkpoints and inference pipeline.

// Tensor `+=` runs in place and can clobber values autograd still needs.
#![allow(clippy::assign_op_pattern)]

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod heads;
pub mod infer;
mod layers;
pub mod losses;
pub mod model;
pub mod refine;
pub mod sff;
pub mod train;

pub use error::{Error, Result};
pub use layers::resize_bilinear;
