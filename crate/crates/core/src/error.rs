use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the feature selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no samples")]
    NoSamples,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty treatment or control group for feature {0}")]
    DegenerateFeature(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("linear system is not positive definite; use lambda > 0 ({0})")]
    NotPositiveDefinite(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("descent violation at iteration {iteration}: {previous} -> {current}; trace {trace:?}")]
    DescentViolation {
        iteration: usize,
        previous: f64,
        current: f64,
        trace: Vec<f64>,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
