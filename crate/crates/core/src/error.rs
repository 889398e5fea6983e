use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: unsupported image format ({detail})")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ArtifactMismatch(_) => 3,
            Error::InvalidParameter(_) => 1,
            _ => 2,
        }
    }
}
