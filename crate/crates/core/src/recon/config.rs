use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::face::{ModelDims, GAMMA_LEN};

/// Term weights and solver schedule of the fitting energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub w_photo: f64,
    pub w_lmk: f64,
    pub w_prior: f64,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    pub damping_init: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    pub damping_cap: f64,
    /// Relative energy decrease below which a level is considered converged.
    pub tolerance: f64,
    /// Standard deviation (pixels) of noise added to observed landmarks by
    /// callers that simulate a detector; 0 disables it.
    pub landmark_noise: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            w_photo: 1.0,
            w_lmk: 10.0,
            w_prior: 0.05,
            pyramid_levels: 3,
            max_iterations: 20,
            damping_init: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 0.5,
            damping_cap: 1e6,
            tolerance: 1e-6,
            landmark_noise: 0.0,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_photo, self.w_lmk, self.w_prior];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(CoreError::Config("energy weights must be finite and non-negative".into()));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(CoreError::Config("at least one energy weight must be positive".into()));
        }
        if self.pyramid_levels == 0 || self.max_iterations == 0 {
            return Err(CoreError::Config("pyramid_levels and max_iterations must be at least 1".into()));
        }
        if !(self.damping_init > 0.0
            && self.damping_increase > 1.0
            && self.damping_decrease > 0.0
            && self.damping_decrease < 1.0
            && self.damping_cap > self.damping_init)
        {
            return Err(CoreError::Config("invalid damping schedule".into()));
        }
        if !(self.tolerance > 0.0) || !(self.landmark_noise >= 0.0) {
            return Err(CoreError::Config("tolerance must be positive, landmark noise non-negative".into()));
        }
        Ok(())
    }
}

/// Parameter groups the solver may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreeSet {
    pub rotation: bool,
    pub translation: bool,
    pub alpha: bool,
    pub beta: bool,
    pub delta: bool,
    pub gamma: bool,
}

impl Default for FreeSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FreeSet {
    pub const fn all() -> Self {
        FreeSet {
            rotation: true,
            translation: true,
            alpha: true,
            beta: true,
            delta: true,
            gamma: true,
        }
    }

    pub const fn none() -> Self {
        FreeSet {
            rotation: false,
            translation: false,
            alpha: false,
            beta: false,
            delta: false,
            gamma: false,
        }
    }

    /// Pose, expression and illumination; identity stays fixed.
    pub const fn tracking() -> Self {
        FreeSet {
            alpha: false,
            beta: false,
            ..Self::all()
        }
    }

    pub const fn expression_only() -> Self {
        FreeSet {
            delta: true,
            ..Self::none()
        }
    }
}

/// One free scalar of the parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Slot {
    Rotation(usize),
    Translation(usize),
    Alpha(usize),
    Beta(usize),
    Delta(usize),
    Gamma(usize),
}

/// Free scalars in flat parameter order (`R | T | alpha | beta | delta | gamma`).
pub(crate) fn free_slots(free: &FreeSet, dims: &ModelDims) -> Vec<(usize, Slot)> {
    let mut out = Vec::new();
    let mut at = 0;
    let mut group = |on: bool, n: usize, make: fn(usize) -> Slot| {
        if on {
            out.extend((0..n).map(|k| (at + k, make(k))));
        }
        at += n;
    };
    group(free.rotation, 3, Slot::Rotation);
    group(free.translation, 3, Slot::Translation);
    group(free.alpha, dims.alpha, Slot::Alpha);
    group(free.beta, dims.beta, Slot::Beta);
    group(free.delta, dims.delta, Slot::Delta);
    group(free.gamma, GAMMA_LEN, Slot::Gamma);
    out
}
