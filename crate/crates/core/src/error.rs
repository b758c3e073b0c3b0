use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("NaN passed to {0}")]
    NotANumber(&'static str),

    #[error("hazard diverges at t = {0}")]
    Divergent(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no active (flowing) frames")]
    NoActiveFrames,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by numerical breakdown rather than bad input or data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Divergent(_) | Error::NotANumber(_)
        )
    }

    /// True for errors caused by unreadable or malformed files.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::Truncated { .. }
                | Error::Corrupt(_)
        )
    }
}
