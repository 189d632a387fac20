use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {point:?} lies outside the search space")]
    OutOfBounds { point: Vec<f64> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown objective `{0}`")]
    UnknownObjective(String),

    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("sobol sequence supports at most {max} dimensions, requested {requested}")]
    UnsupportedDimension { requested: usize, max: usize },

    #[error("density estimator holds no points")]
    EmptyEstimator,

    #[error("cannot fit regressor: {0}")]
    Fit(String),

    #[error("score is undefined: no positive ground truth and no positive predictions")]
    UndefinedScore,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("objective evaluation failed at order {order}: {source}")]
    Evaluation {
        order: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run aborted after {} evaluations: {source}", partial.records.len())]
    Aborted {
        partial: Box<crate::search::RunTrace>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
