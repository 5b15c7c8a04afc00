use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error after {bytes_written} bytes: {source}")]
    Io {
        bytes_written: u64,
        #[source]
        source: io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated input: expected {expected} bytes, got {actual}")]
    Truncation { expected: u64, actual: u64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub(crate) fn io(source: io::Error) -> Self {
        Error::Io {
            bytes_written: 0,
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
