//! Analysis-by-synthesis fitting of the face model to frontal images.

mod config;
mod energy;
mod solver;

pub use config::{EnergyConfig, FreeSet};
pub use energy::{
    energy_jacobian, energy_jacobian_on, energy_residuals, energy_residuals_on, photo_vertices,
    Residuals,
};
pub use solver::{
    fit_frame, fit_sequence, read_fits_jsonl, write_fits_jsonl, EnergyRecord, FitReport, FrameFit,
};
