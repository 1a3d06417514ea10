//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: ({x1}, {y1}, {x2}, {y2}) has non-positive extent")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing run artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
