use std::io;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum SpanError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value {value} outside the unit interval")]
    Domain { value: f64 },

    #[error("non-finite input: {0}")]
    Input(String),

    #[error("invalid action: {0}")]
    Action(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("training fault in `{entry}`: {detail}")]
    TrainingFault { entry: String, detail: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = SpanError> = std::result::Result<T, E>;

impl SpanError {
    pub(crate) fn fault(entry: impl Into<String>, detail: impl Into<String>) -> Self {
        SpanError::TrainingFault {
            entry: entry.into(),
            detail: detail.into(),
        }
    }
}
