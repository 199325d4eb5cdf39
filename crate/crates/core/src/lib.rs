//! Patch-wise polynomial implicit neural representation for video.
// negated float comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod sampling;
pub mod tasks;
pub mod tensor;
#[cfg(test)]
mod testutil;
pub mod training;
pub use error::{Error, Result};
