use thiserror::Error;

/// Errors raised across the crate. The variants map one-to-one onto the CLI
/// exit codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("insufficient kernel rank: {0}")]
    InsufficientRank(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Stable process exit code: 2 config/validation, 3 numeric abort,
    /// 4 kernel rank.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::Usage(_) => 2,
            Error::Numeric(_) | Error::Io(_) => 3,
            Error::InsufficientRank(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
