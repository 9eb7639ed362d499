use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum SweetError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl SweetError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        SweetError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SweetError>;
