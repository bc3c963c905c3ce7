use std::process::ExitCode;

use minvae_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] Error),
    /// A check ran to completion and reported failure.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(Error::InvalidInput(_) | Error::InvalidState(_)) => 2,
            CliError::Core(Error::Io(_)) => 3,
            CliError::Core(Error::Numerical(_)) | CliError::Failed(_) => 4,
        })
    }
}
