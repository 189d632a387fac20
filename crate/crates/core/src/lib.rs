//! Density-adaptive partition-tree search for black-box coverage problems.
//!
//! Given a deterministic objective `f` over a box and a threshold `delta`, the
//! goal is to spend a fixed number of evaluations so that the set
//! `{x : f(x) > delta}` can be recovered as accurately as possible from the
//! samples. The crate provides:
//!
//! * [`search::lambda_run`], the partition-tree agent with inverse-density
//!   weighted statistics and beam selection of leaves;
//! * [`bench`] baselines (random and Sobol search) and the benchmark driver;
//! * [`coverage`], which scores a sample history against a ground-truth grid
//!   with a linear-interpolation classifier and the F-beta measure.

pub mod bench;
pub mod cli;
pub mod coverage;
pub mod density;
pub mod error;
pub mod partition;
pub mod problem;
pub mod sampling;
pub mod search;

pub use error::{Error, Result};
