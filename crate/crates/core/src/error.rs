use std::io;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("idx: bad magic (expected two zero bytes, found {0:02x} {1:02x})")]
    IdxBadMagic(u8, u8),

    #[error("idx: unsupported data type byte 0x{0:02x}")]
    IdxUnsupportedType(u8),

    #[error("idx: truncated stream (need {expected} bytes, found {found})")]
    IdxTruncated { expected: usize, found: usize },

    #[error("checkpoint: {0}")]
    Format(String),

    #[error("config line {line}: key `{key}`: {detail}")]
    Config {
        line: usize,
        key: String,
        detail: String,
    },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::IdxBadMagic(..) | Error::IdxUnsupportedType(_) | Error::IdxTruncated { .. } => {
                "idx"
            }
            Error::Format(_) => "format",
            Error::Config { .. } => "config",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
