use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or requests the command refuses.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] xmc_core::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if !e.is_data_error() => 4,
            CliError::Core(_) | CliError::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
