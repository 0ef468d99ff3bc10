use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("dataset length mismatch: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("record {ordinal}: {message}")]
    Record { ordinal: u64, message: String },

    #[error("world generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed or unreadable files.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::Format { .. } | Error::Truncated { .. } | Error::Record { .. } | Error::Io(_)
        )
    }
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
