use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("no grain found")]
    NoGrain,

    /// A non-finite value showed up in a gradient, parameter or loss.
    #[error("diverged: {0}")]
    Diverged(String),

    #[error("not a model file")]
    NotAModelFile,

    #[error("unsupported model format version {0:?}")]
    UnsupportedModelVersion(char),

    #[error("truncated model")]
    TruncatedModel,

    #[error("inconsistent model: {0}")]
    InconsistentModel(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
