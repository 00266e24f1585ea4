use std::fmt;
use std::path::Path;

use hpl::HplError;

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const VALIDATION: i32 = 1;
pub const NUMERICAL: i32 = 2;
pub const IO: i32 = 3;

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: VALIDATION,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: IO,
            message: format!("I/O error on {}: {e}", path.display()),
        }
    }
}

impl From<HplError> for CliError {
    fn from(e: HplError) -> Self {
        let code = match &e {
            HplError::Validation(_) => VALIDATION,
            HplError::Singular(_) | HplError::Generation(_) => NUMERICAL,
            HplError::Io { .. } | HplError::Format { .. } => IO,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
