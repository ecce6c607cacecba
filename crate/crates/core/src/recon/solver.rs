//! Levenberg–Marquardt over an image pyramid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::camera::PerspectiveCamera;
use crate::error::{check_len, CoreError, Result};
use crate::face::{FaceBasis, ParamVector};
use crate::render::{Image, LandmarkSet};

use super::config::{free_slots, EnergyConfig, FreeSet};
use super::energy::{evaluate, photo_vertices, Observation, Residuals};

/// Energies after one accepted step (or at the start of a level).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub level: usize,
    pub iteration: usize,
    pub photo: f64,
    pub landmark: f64,
    pub prior: f64,
    pub total: f64,
}

impl EnergyRecord {
    fn new(level: usize, iteration: usize, r: &Residuals) -> Self {
        EnergyRecord {
            level,
            iteration,
            photo: r.photo_energy(),
            landmark: r.landmark_energy(),
            prior: r.prior_energy(),
            total: r.total(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ParamVector,
    /// Per level: the starting energy followed by one record per accepted step.
    pub energies: Vec<EnergyRecord>,
    /// Accepted steps over all levels.
    pub iterations: usize,
    /// Whether the finest level converged.
    pub converged: bool,
}

impl FitReport {
    /// Energies after the last accepted step.
    pub fn final_energy(&self) -> Option<&EnergyRecord> {
        self.energies.last()
    }
}

/// Energies below this are treated as an exact fit.
const ENERGY_FLOOR: f64 = 1e-20;
/// Floor on the diagonal scaling so unobserved parameters stay solvable.
const DIAGONAL_FLOOR: f64 = 1e-9;

fn apply_step(params: &ParamVector, slots: &[(usize, super::config::Slot)], step: &DVector<f64>) -> Result<ParamVector> {
    let mut flat = params.to_flat();
    for (k, &(idx, _)) in slots.iter().enumerate() {
        flat[idx] += step[k];
    }
    ParamVector::from_flat(&ParamVector::dims_of(params), &flat)
}

enum LevelOutcome {
    Converged,
    Exhausted,
    Diverged,
}

#[allow(clippy::too_many_arguments)]
fn solve_level(
    basis: &FaceBasis,
    params: &mut ParamVector,
    obs: &Observation,
    free: &FreeSet,
    cfg: &EnergyConfig,
    level: usize,
    records: &mut Vec<EnergyRecord>,
    accepted: &mut usize,
) -> Result<LevelOutcome> {
    let vertices = photo_vertices(basis, params, &obs.cam)?;
    let slots = free_slots(free, &basis.dims);
    if slots.is_empty() {
        let (r, _) = evaluate(basis, params, obs, &vertices, cfg, None)?;
        records.push(EnergyRecord::new(level, 0, &r));
        return Ok(LevelOutcome::Converged);
    }
    let mut lambda = cfg.damping_init;
    let (mut res, _) = evaluate(basis, params, obs, &vertices, cfg, None)?;
    let mut energy = res.total();
    records.push(EnergyRecord::new(level, 0, &res));

    for iteration in 1..=cfg.max_iterations {
        if energy < ENERGY_FLOOR {
            return Ok(LevelOutcome::Converged);
        }
        let (_, jac) = evaluate(basis, params, obs, &vertices, cfg, Some(free))?;
        let jac: DMatrix<f64> = jac.expect("jacobian requested");
        let r = DVector::from_vec(res.stacked());
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if !a.iter().chain(g.iter()).all(|v| v.is_finite()) {
            return Err(CoreError::Config("non-finite normal equations".into()));
        }
        loop {
            let mut damped = a.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda * a[(k, k)].max(DIAGONAL_FLOOR);
            }
            let step = damped.cholesky().map(|c| -c.solve(&g));
            if let Some(step) = step {
                let predicted = -(2.0 * g.dot(&step) + step.dot(&(&a * &step)));
                let candidate = apply_step(params, &slots, &step)?;
                let (cand_res, _) = evaluate(basis, &candidate, obs, &vertices, cfg, None)?;
                let cand_energy = cand_res.total();
                if cand_energy < energy {
                    let decrease = (energy - cand_energy) / energy;
                    *params = candidate;
                    res = cand_res;
                    energy = cand_energy;
                    *accepted += 1;
                    records.push(EnergyRecord::new(level, iteration, &res));
                    lambda = (lambda * cfg.damping_decrease).max(1e-12);
                    if decrease < cfg.tolerance {
                        return Ok(LevelOutcome::Converged);
                    }
                    break;
                }
                if predicted <= cfg.tolerance * energy {
                    // No model step can make meaningful progress: stationary.
                    return Ok(LevelOutcome::Converged);
                }
            }
            lambda *= cfg.damping_increase;
            if lambda > cfg.damping_cap {
                return Ok(LevelOutcome::Diverged);
            }
        }
    }
    Ok(LevelOutcome::Exhausted)
}

/// Fits the free parameters to one frontal frame, coarse to fine. The image
/// size must be divisible by `2^(pyramid_levels - 1)`.
pub fn fit_frame(
    basis: &FaceBasis,
    image: &Image,
    landmarks: &LandmarkSet,
    cam: &PerspectiveCamera,
    init: &ParamVector,
    free: &FreeSet,
    cfg: &EnergyConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    init.dims_match(&basis.dims)?;
    let mut pyramid = vec![image.clone()];
    for l in 1..cfg.pyramid_levels {
        pyramid.push(image.downsample(1 << l)?);
    }
    let mut params = init.clone();
    let mut records = Vec::new();
    let mut accepted = 0;
    let mut converged = false;
    for level in (0..cfg.pyramid_levels).rev() {
        let obs = Observation {
            image: &pyramid[level],
            cam: cam.scaled(1 << level),
            landmarks,
            landmark_cam: *cam,
        };
        let outcome = solve_level(basis, &mut params, &obs, free, cfg, level, &mut records, &mut accepted)?;
        converged = matches!(outcome, LevelOutcome::Converged);
    }
    Ok(FitReport {
        params,
        energies: records,
        iterations: accepted,
        converged,
    })
}

/// Per-frame outcome of a sequence fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFit {
    pub frame: usize,
    pub params: ParamVector,
    pub iterations: usize,
    pub converged: bool,
    pub final_energy: f64,
}

/// Fits a frontal sequence: all parameters on frame 0, then pose, expression
/// and illumination on later frames, each warm-started from its predecessor.
/// A frame identical to its predecessor reuses the previous estimate.
pub fn fit_sequence(
    basis: &FaceBasis,
    frames: &[Image],
    landmarks: &[LandmarkSet],
    cam: &PerspectiveCamera,
    init: &ParamVector,
    cfg: &EnergyConfig,
) -> Result<Vec<FrameFit>> {
    if frames.is_empty() {
        return Err(CoreError::Config("fit_sequence needs at least one frame".into()));
    }
    check_len("landmark tracks", frames.len(), landmarks.len())?;
    let mut out: Vec<FrameFit> = Vec::with_capacity(frames.len());
    for (k, (image, lmk)) in frames.iter().zip(landmarks).enumerate() {
        if k > 0 && frames[k - 1] == *image && landmarks[k - 1] == *lmk {
            let prev = out[k - 1].clone();
            out.push(FrameFit { frame: k, ..prev });
            continue;
        }
        let (start, free) = match out.last() {
            None => (init.clone(), FreeSet::all()),
            Some(prev) => (prev.params.clone(), FreeSet::tracking()),
        };
        let report = fit_frame(basis, image, lmk, cam, &start, &free, cfg)?;
        out.push(FrameFit {
            frame: k,
            final_energy: report.final_energy().map_or(0.0, |e| e.total),
            iterations: report.iterations,
            converged: report.converged,
            params: report.params,
        });
    }
    Ok(out)
}

/// Writes one JSON object per frame.
pub fn write_fits_jsonl(path: &std::path::Path, fits: &[FrameFit]) -> Result<()> {
    let mut text = String::new();
    for f in fits {
        text.push_str(&serde_json::to_string(f)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(CoreError::io(path))
}

pub fn read_fits_jsonl(path: &std::path::Path) -> Result<Vec<FrameFit>> {
    let text = std::fs::read_to_string(path).map_err(CoreError::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CoreError::from))
        .collect()
}
