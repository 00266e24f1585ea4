use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum HplError {
    /// Input violates a documented precondition (shape, range, symmetry, finiteness).
    #[error("validation error: {0}")]
    Validation(String),

    /// A linear system or Sylvester equation has no stable solution.
    #[error("singular system: {0}")]
    Singular(String),

    /// A matrix file is malformed.
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Synthetic instance generation gave up.
    #[error("generation error: {0}")]
    Generation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HplError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        HplError::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HplError::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure is numerical rather than a bad input or I/O problem.
    pub fn is_numerical(&self) -> bool {
        matches!(self, HplError::Singular(_) | HplError::Generation(_))
    }
}

pub type Result<T> = std::result::Result<T, HplError>;
