use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the hydra pipeline.
#[derive(Debug, Error)]
pub enum HydraError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("i/o error at {path}: {source}")]
    Persistence {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("numeric error at step {step}: {message}")]
    Numeric { step: usize, message: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("demonstration generation failed: {0}")]
    Generation(String),
}

impl HydraError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        HydraError::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HydraError::Persistence {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = HydraError> = std::result::Result<T, E>;
