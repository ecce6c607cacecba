use std::path::{Path, PathBuf};

use egoface_core::CoreError;
use egoface_nets::NetsError;
use egoface_nn::NnError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("missing {what}: {} not found (run `{command}` first)", .path.display())]
    Missing {
        what: String,
        path: PathBuf,
        command: &'static str,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(CoreError),
    #[error(transparent)]
    Nets(NetsError),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 2 configuration, 3 missing prerequisite,
    /// 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Missing { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(_) | CliError::Nets(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(m) | CoreError::Dimensions(m) => CliError::config("(model)", m),
            other => CliError::Core(other),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        CliError::from(NetsError::Nn(e))
    }
}

impl From<NetsError> for CliError {
    fn from(e: NetsError) -> Self {
        match e {
            NetsError::NonFinite(m) => CliError::Numeric(m),
            NetsError::Nn(NnError::NonFinite { stage }) => CliError::Numeric(format!("non-finite value in {stage}")),
            NetsError::Core(c) => CliError::from(c),
            other => CliError::Nets(other),
        }
    }
}
