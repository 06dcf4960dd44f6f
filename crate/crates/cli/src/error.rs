use std::path::Path;

use thiserror::Error;

/// Failure of a subcommand. The variant decides the exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration, or input artifacts; exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while doing the work; exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn missing(path: &Path, what: &str) -> Self {
        CliError::Validation(format!("missing artifact {}: {what}", path.display()))
    }
}

impl From<neref::io::ConfigError> for CliError {
    fn from(e: neref::io::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<neref::io::IoError> for CliError {
    fn from(e: neref::io::IoError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the path to an I/O error.
pub fn io_at<T>(path: &Path, r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
