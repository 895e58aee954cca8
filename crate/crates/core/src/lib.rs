#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod centers;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fingerprint;
pub mod losses;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
