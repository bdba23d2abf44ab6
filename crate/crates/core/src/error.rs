use std::path::PathBuf;

use crate::tikhonov::RegCoefficients;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch { op: &'static str, expected: usize, found: usize },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("{0} step caches for a sequence of length {1}")]
    CacheMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}; regularizer coefficients: {coefficients:?}")]
    NonFiniteLoss { epoch: usize, coefficients: Box<RegCoefficients> },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
