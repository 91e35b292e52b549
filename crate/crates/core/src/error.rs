use std::io;

use thiserror::Error;

/// Errors produced by the decomposition library and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed `.tns`, model, or config input.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid policy {0}")]
    InvalidPolicy(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad input data rather than bad arguments or
    /// runtime failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::EmptyInput | Error::Io(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
