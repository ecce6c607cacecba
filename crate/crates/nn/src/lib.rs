//! Minimal tensors, layer graphs with reverse-mode gradients, and ADAM.
//!
//! Everything is single-sample and value-semantic: a forward pass takes an
//! input tensor and an immutable [`NetworkState`], and training loops batch by
//! accumulating [`Gradients`] in a fixed order.

pub mod adam;
pub mod error;
pub mod gradcheck;
mod im2col;
pub mod io;
pub mod loss;
pub mod network;
pub mod spec;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use error::{NnError, Result};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use network::{
    backward, build_network, forward, forward_with_cache, ForwardCache, Gradients, Mode,
    NetworkState,
};
pub use spec::{Layer, NetworkSpec};
pub use tensor::{Real, Tensor};
