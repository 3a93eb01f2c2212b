use std::io;

use thiserror::Error;

/// Errors produced anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: String,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A value that a correctly working model can never produce, such as a
    /// probability outside `[0, 1]`.
    #[error("model defect: {0}")]
    ModelDefect(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            op: op.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
