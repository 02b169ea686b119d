use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Bad input data; `location` names the file, line or sample id.
    #[error("data error at {location}: {message}")]
    Data { location: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFinite { step: u64, batch: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {location}: {source}")]
    Json {
        location: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn data(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn json(location: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            location: location.into(),
            source,
        }
    }

    pub fn arg(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
