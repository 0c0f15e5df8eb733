//! Post-processing of score-based binary classifiers into abstaining
//! classifiers with group-wise accept-rate targets and demographic parity.
//!
//! The fit solves the empirical dual over `(lambda, gamma)` as an explicit
//! sparse LP; the fitted model is those `2K` numbers.

// Index loops mirror the math in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod dual;
pub mod error;
pub mod lp;
pub mod metrics;
pub mod numfmt;
pub mod oracle;
pub mod postprocess;
pub mod problem;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
