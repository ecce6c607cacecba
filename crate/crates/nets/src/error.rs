use std::path::PathBuf;

use egoface_core::CoreError;
use egoface_nn::NnError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, NetsError>;

#[derive(Debug, Error)]
pub enum NetsError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} is empty")]
    Empty(String),
    #[error("size mismatch: {0}")]
    Size(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl NetsError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> NetsError + '_ {
        move |source| NetsError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
