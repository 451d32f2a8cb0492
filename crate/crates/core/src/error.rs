use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unrecorded computation: {0}")]
    Unrecorded(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Data(String),

    #[error("unpaired file `{0}`")]
    Unpaired(String),

    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
