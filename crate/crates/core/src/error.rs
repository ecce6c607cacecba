use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{what}: expected length {expected}, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("normal {index} has length {length}, expected unit length")]
    NonUnitNormal { index: usize, length: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no sync events detected in the {0} stream")]
    NoSyncEvents(&'static str),
    #[error("sync verification failed: first-event offset {first} vs last-event offset {last}")]
    SyncVerification { first: i64, last: i64 },
    #[error("image size mismatch: {0}")]
    ImageSize(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
        move |source| CoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(CoreError::Length {
            what,
            expected,
            actual,
        })
    }
}
