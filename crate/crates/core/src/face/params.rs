use serde::{Deserialize, Serialize};

use crate::error::{check_len, CoreError, Result};

/// Nine real SH coefficients per colour channel.
pub const GAMMA_LEN: usize = 27;

/// Sizes of the coefficient blocks of a face model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub vertices: usize,
    pub alpha: usize,
    pub beta: usize,
    pub delta: usize,
}

impl ModelDims {
    /// Small model used by default throughout the engine.
    pub const fn desk() -> Self {
        ModelDims {
            vertices: 500,
            alpha: 16,
            beta: 16,
            delta: 12,
        }
    }

    /// Coefficient counts of the published model (the vertex count is ours).
    pub const fn paper() -> Self {
        ModelDims {
            vertices: 4800,
            alpha: 128,
            beta: 128,
            delta: 64,
        }
    }

    pub fn param_count(&self) -> usize {
        3 + 3 + self.alpha + self.beta + self.delta + GAMMA_LEN
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices < 100 {
            return Err(CoreError::Dimensions(format!(
                "vertex count {} is below the minimum of 100",
                self.vertices
            )));
        }
        if self.alpha == 0 || self.beta == 0 || self.delta == 0 {
            return Err(CoreError::Dimensions(
                "coefficient dimensions must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::desk()
    }
}

/// Per-frame model parameters: head pose, identity, reflectance, expression
/// and illumination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamVector {
    /// Euler angles in radians, applied as `Rz · Ry · Rx`.
    pub rotation: [f64; 3],
    /// Millimetres.
    pub translation: [f64; 3],
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    /// Channel-major: `gamma[9 * channel + band]`.
    pub gamma: Vec<f64>,
}

impl ParamVector {
    /// Zero coefficients, identity rotation, zero translation, no light.
    pub fn zeros(dims: &ModelDims) -> Self {
        ParamVector {
            rotation: [0.0; 3],
            translation: [0.0; 3],
            alpha: vec![0.0; dims.alpha],
            beta: vec![0.0; dims.beta],
            delta: vec![0.0; dims.delta],
            gamma: vec![0.0; GAMMA_LEN],
        }
    }

    pub fn len(&self) -> usize {
        6 + self.alpha.len() + self.beta.len() + self.delta.len() + self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims_match(&self, dims: &ModelDims) -> Result<()> {
        check_len("alpha", dims.alpha, self.alpha.len())?;
        check_len("beta", dims.beta, self.beta.len())?;
        check_len("delta", dims.delta, self.delta.len())?;
        check_len("gamma", GAMMA_LEN, self.gamma.len())
    }

    /// Flat layout `R | T | alpha | beta | delta | gamma`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.rotation);
        v.extend_from_slice(&self.translation);
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.delta);
        v.extend_from_slice(&self.gamma);
        v
    }

    pub fn from_flat(dims: &ModelDims, flat: &[f64]) -> Result<Self> {
        check_len("parameter vector", dims.param_count(), flat.len())?;
        let mut at = 6;
        let mut take = |n: usize| {
            let s = flat[at..at + n].to_vec();
            at += n;
            s
        };
        let alpha = take(dims.alpha);
        let beta = take(dims.beta);
        let delta = take(dims.delta);
        let gamma = take(GAMMA_LEN);
        Ok(ParamVector {
            rotation: [flat[0], flat[1], flat[2]],
            translation: [flat[3], flat[4], flat[5]],
            alpha,
            beta,
            delta,
            gamma,
        })
    }

    /// Dimensions implied by the coefficient lengths (vertex count unknown).
    pub fn dims_of(&self) -> ModelDims {
        ModelDims {
            vertices: 0,
            alpha: self.alpha.len(),
            beta: self.beta.len(),
            delta: self.delta.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}
