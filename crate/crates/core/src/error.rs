use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the try-on pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition. `field` names the offending input.
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("tweak error: {0}")]
    Tweak(String),

    #[error("training aborted: non-finite {term} loss at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Shape(_) | Error::Format(_) | Error::Tweak(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
