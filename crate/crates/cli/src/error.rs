//! Errors surfaced by CLI commands and their process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input or arguments. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong while doing the work. Exit code 1.
    #[error("{0:#}")]
    Failed(#[from] anyhow::Error),
}

impl CliError {
    pub fn usage(message: impl std::fmt::Display) -> Self {
        CliError::Usage(message.to_string())
    }

    pub fn failed(message: impl std::fmt::Display) -> Self {
        CliError::Failed(anyhow::anyhow!("{message}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}
