//! Face model, cameras, rasterizer, model fitting and capture simulation.

pub mod camera;
pub mod capture;
pub mod error;
pub mod recon;
pub mod render;
pub mod face;
pub mod rotation;

pub use error::{CoreError, Result};
