//! Networks of the EgoFace pipeline: the expression regressor, the
//! albedo-to-frontal translator, and the metrics used to evaluate both.

pub mod data;
pub mod ego2exp;
pub mod error;
pub mod eval;
pub mod exp2vreal;

pub use error::{NetsError, Result};
