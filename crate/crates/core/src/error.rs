use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LerError>;

#[derive(Debug, Error)]
pub enum LerError {
    #[error("{path}: row {row}, column {col}: {msg}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate kinship: all markers are monomorphic (k = 0)")]
    DegenerateKinship,

    #[error("no rule has nonzero variance on the training rows")]
    EmptyRuleMatrix,

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("marker mapping error: {0}")]
    Mapping(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("digest mismatch for {path}: expected {expected}, found {found}")]
    DigestMismatch {
        path: String,
        expected: String,
        found: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LerError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LerError::Io {
            path: path.into(),
            source,
        }
    }
}
