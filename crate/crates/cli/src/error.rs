use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line tool, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("input error: {0}")]
    Ingestion(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// 1 for usage, input and I/O problems; 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<polar_expansion::Error> for CliError {
    fn from(e: polar_expansion::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
