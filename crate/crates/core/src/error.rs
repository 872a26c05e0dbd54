use std::io;

use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants map onto the CLI exit codes: configuration problems exit with 2,
/// missing or unreadable data with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("non-finite value produced by {layer}")]
    Numeric { layer: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Structural(_) | Error::Input(_) => 2,
            Error::Format { .. } | Error::Io { .. } => 3,
            Error::Numeric { .. } => 1,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn numeric(layer: impl Into<String>) -> Self {
        Error::Numeric { layer: layer.into() }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
