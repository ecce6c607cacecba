//! Driver for the capture, training, reenactment and evaluation pipeline.

pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, Result};
