use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Vectors or matrices whose sizes do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Caller-supplied value outside its valid range.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("model construction failed: {0}")]
    Construction(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid generator spec: {0}")]
    Spec(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed persisted data; `offset` is the byte position where reading failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
