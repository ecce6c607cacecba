use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer} ({kind}): {message}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        message: String,
    },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {stage}")]
    NonFinite { stage: String },
    #[error("backward called without a retained forward cache")]
    MissingCache,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed weight file: {message}")]
    Format { path: PathBuf, message: String },
    #[error("spec JSON: {0}")]
    Json(#[from] serde_json::Error),
}
