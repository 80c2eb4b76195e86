use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NirmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NirmError {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{what} index {index} out of range (len {len})")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("unsupported case: {0}")]
    UnsupportedCase(String),

    #[error("no original person has sum score {sum_score}; the intercept lookup has no match")]
    NoSumScoreMatch { sum_score: usize },

    #[error("item `{item}` has no positive responses, so its linkage position is undefined")]
    DegenerateItem { item: String },

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("data hash mismatch: artifact was fitted on {expected}, supplied data hashes to {found}")]
    HashMismatch { expected: String, found: String },

    #[error("refusing to overwrite existing output `{}`", .0.display())]
    AlreadyExists(PathBuf),

    #[error("refusing {requested} items in a contingency table (cap is {cap})")]
    TooManyItems { requested: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NirmError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        NirmError::Validation(msg.into())
    }
}
