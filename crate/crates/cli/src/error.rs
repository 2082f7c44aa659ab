use cdtvd_core::Error as CoreError;
use thiserror::Error;

/// Failure categories, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        use CoreError::*;
        let msg = e.to_string();
        match e {
            Config(_) | InvalidFactor(_) | InvalidT(_) | UnknownKind(_) | InvalidGrid(_) | BadTimestep { .. } => {
                CliError::Config(msg)
            }
            NonFiniteLoss { .. } | Image(_) | EmptyBatch | EmptyPointSet | EmptySeeds => CliError::Runtime(msg),
            _ => CliError::Data(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
