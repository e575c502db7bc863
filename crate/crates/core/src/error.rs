use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("empty region mask: {0}")]
    EmptyMask(String),

    #[error("non-finite loss `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error("training diverged: non-finite `{term}` at step {step}; last checkpoint: {}", last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Diverged {
        term: String,
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("checkpoint integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("training budget exhausted: {0}")]
    Budget(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
