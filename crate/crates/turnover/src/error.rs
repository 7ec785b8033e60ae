//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model/run configuration (bad key, incompatible layer shapes, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid input to an operation (shape mismatch, empty dataset, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Malformed data file. `offset` is the byte position where validation failed.
    #[error("format error at offset {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Non-finite values encountered during computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Internal invariant violated (stale cache, ...).
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// Stable process exit code for the CLI: 1 config/usage, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Input(_) | Error::Format { .. } | Error::Io(_) => 2,
            Error::Numeric(_) | Error::Internal(_) => 3,
        }
    }
}
