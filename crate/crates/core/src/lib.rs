//! Pure-Rust building blocks for a refined, attention-guided quadrilateral
//! text detector: box geometry and anchors, anchor matching, attention-gated
//! proposal selection, re-scoring, ICDAR-style evaluation, synthetic data and
//! run configuration.

pub mod annotation;
pub mod apr;
pub mod attention;
pub mod config;
pub mod detection;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod matching;
pub mod postprocess;
pub mod synthdata;

pub use error::{Error, Result};
