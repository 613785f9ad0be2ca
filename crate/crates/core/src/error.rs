use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("householder vector collapsed: squared norm {norm_sq:e} is below the floor")]
    DegenerateHouseholder { norm_sq: f64 },

    #[error("matrix is not symmetric positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("flow length {k} exceeds min({l1}, {l2})")]
    FlowTooLong { k: usize, l1: usize, l2: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("target kind does not match the likelihood ({0})")]
    TargetKind(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: usize, actual: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            actual,
            context,
        }
    }
}

pub(crate) fn ensure_len(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::dims(expected, actual, context))
    }
}
