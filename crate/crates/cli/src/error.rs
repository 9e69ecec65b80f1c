use thiserror::Error;

/// Exit status for usage and I/O failures.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failed statistical preconditions.
pub const EXIT_STATISTICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] reldep::Error),

    #[error("{0}")]
    Usage(String),

    #[error("cannot write {target}: {source}")]
    Write {
        target: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_statistical() => EXIT_STATISTICAL,
            _ => EXIT_USAGE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
