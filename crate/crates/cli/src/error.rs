use std::fmt;

use specdeceive_core::Error;

/// Failure classes with stable process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Validation(String),
    /// Exit code 3.
    Io(String),
    /// Exit code 4.
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Divergence(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence(_) | Error::NonFinite(_) => CliError::Divergence(e.to_string()),
            Error::Io(_)
            | Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::Truncated
            | Error::ShapeTable(_)
            | Error::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
