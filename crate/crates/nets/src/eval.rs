//! Geometry error, self-reenactment error and per-component timing.

use std::fs;
use std::path::Path;
use std::time::Instant;

use egoface_core::face::FaceBasis;
use egoface_core::render::Image;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{resized, tensor_image};
use crate::ego2exp::{predict_set, ExpressionRegressor, ExpressionSet};
use crate::error::{NetsError, Result};
use crate::exp2vreal::{translate_tensor, GanNetwork, TranslationSet};

/// Distances of one frame's vertices, in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexDistances {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Euclidean distance between corresponding vertices of two flat `xyz` lists.
pub fn pervertex_distance(a: &[f64], b: &[f64]) -> Result<VertexDistances> {
    if a.len() != b.len() || !a.len().is_multiple_of(3) {
        return Err(NetsError::Size(format!(
            "vertex lists of {} and {} coordinates",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(NetsError::Empty("vertex list".into()));
    }
    let mut out = VertexDistances {
        min: f64::INFINITY,
        max: 0.0,
        mean: 0.0,
    };
    for (p, q) in a.chunks_exact(3).zip(b.chunks_exact(3)) {
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        out.min = out.min.min(d);
        out.max = out.max.max(d);
        out.mean += d;
    }
    out.mean /= (a.len() / 3) as f64;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoErrorStats {
    pub frames: Vec<VertexDistances>,
    /// Per-frame statistics averaged over the sequence.
    pub average: VertexDistances,
}

impl GeoErrorStats {
    pub fn from_frames(frames: Vec<VertexDistances>) -> Result<Self> {
        if frames.is_empty() {
            return Err(NetsError::Empty("geometry error frames".into()));
        }
        let n = frames.len() as f64;
        let average = VertexDistances {
            min: frames.iter().map(|f| f.min).sum::<f64>() / n,
            max: frames.iter().map(|f| f.max).sum::<f64>() / n,
            mean: frames.iter().map(|f| f.mean).sum::<f64>() / n,
        };
        Ok(GeoErrorStats { frames, average })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        fs::write(path, text).map_err(NetsError::io(path))
    }

    /// `frame,min,max,mean` rows followed by the average.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("frame,min,max,mean\n");
        for (i, f) in self.frames.iter().enumerate() {
            out.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", f.min, f.max, f.mean));
        }
        let a = &self.average;
        out.push_str(&format!("average,{:.6},{:.6},{:.6}\n", a.min, a.max, a.mean));
        fs::write(path, out).map_err(NetsError::io(path))
    }

    pub fn table(&self) -> String {
        let a = &self.average;
        format!(
            "frames  min (mm)  max (mm)  mean (mm)\n{:>6}  {:>8.3}  {:>8.3}  {:>9.3}\n",
            self.frames.len(),
            a.min,
            a.max,
            a.mean
        )
    }
}

/// Geometry error between meshes built from the same identity with true
/// and predicted expressions.
pub fn geometry_errors(
    basis: &FaceBasis,
    alpha: &[f64],
    truths: &[Vec<f64>],
    predictions: &[Vec<f64>],
) -> Result<GeoErrorStats> {
    if truths.len() != predictions.len() {
        return Err(NetsError::Size(format!(
            "{} predictions for {} frames",
            predictions.len(),
            truths.len()
        )));
    }
    let frames = truths
        .par_iter()
        .zip(predictions)
        .map(|(t, p)| {
            let a = basis.assemble_geometry(alpha, t)?;
            let b = basis.assemble_geometry(alpha, p)?;
            pervertex_distance(&a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    GeoErrorStats::from_frames(frames)
}

/// Runs the regressor over a test set and measures the geometry it implies.
pub fn eval_ego2exp_geometry(
    basis: &FaceBasis,
    alpha: &[f64],
    regressor: &ExpressionRegressor,
    set: &ExpressionSet,
) -> Result<GeoErrorStats> {
    let predictions = predict_set(regressor, set)?;
    geometry_errors(basis, alpha, &set.targets, &predictions)
}

/// Per-frame image error of a reenactment against the recorded frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReenactmentError {
    /// Side of the square frames the error was measured at.
    pub size: usize,
    pub entries: Vec<usize>,
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl ReenactmentError {
    /// `entry,mse` rows followed by the mean.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("entry,mse\n");
        for (e, m) in self.entries.iter().zip(&self.per_frame) {
            out.push_str(&format!("{e},{m:.9e}\n"));
        }
        out.push_str(&format!("mean,{:.9e}\n", self.mean));
        fs::write(path, out).map_err(NetsError::io(path))
    }
}

/// Mean squared error over pixels and channels between each produced frame
/// and the recorded frontal frame, both area-resized to `size` first.
pub fn self_reenactment_mse<F>(set: &TranslationSet, entries: &[usize], size: usize, produce: F) -> Result<ReenactmentError>
where
    F: Fn(usize) -> Result<Image> + Sync,
{
    if entries.is_empty() {
        return Err(NetsError::Empty("reenactment test frames".into()));
    }
    if size > set.image_size {
        return Err(NetsError::Size(format!(
            "cannot compare {}-pixel frames at {size} pixels",
            set.image_size
        )));
    }
    let per_frame = entries
        .par_iter()
        .map(|&e| {
            let out = resized(&produce(e)?, size)?;
            let truth = resized(&tensor_image(&set.front(e))?, size)?;
            Ok(out.mse(&truth)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(ReenactmentError {
        size,
        entries: entries.to_vec(),
        per_frame,
        mean,
    })
}

/// Self-reenactment error of a generator fed the recorded albedo windows.
pub fn generator_reenactment_mse(
    generator: &GanNetwork,
    set: &TranslationSet,
    entries: &[usize],
    size: usize,
) -> Result<ReenactmentError> {
    let window = generator.config.temporal_window;
    self_reenactment_mse(set, entries, size, |e| {
        tensor_image(&translate_tensor(generator, &set.window(e, window))?)
    })
}

/// Which pipeline stage a timed component belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ego2Exp,
    Rendering,
    Exp2VRealFace,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Ego2Exp => "Ego2Exp",
            Stage::Rendering => "Synthetic rendering",
            Stage::Exp2VRealFace => "Exp2VRealFace",
        }
    }
}

/// Published per-frame timings of the original components, keyed by the
/// name of the component standing in for each.
pub const PUBLISHED_MS: [(&str, f64); 6] = [
    ("vgg-analog", 26.4),
    ("resnet-analog", 11.5),
    ("alexnet-analog", 5.5),
    ("albedo", 3.3),
    ("full", 39.4),
    ("optimized", 21.4),
];

pub fn published_ms(component: &str) -> Option<f64> {
    PUBLISHED_MS.iter().find(|(n, _)| *n == component).map(|&(_, ms)| ms)
}

/// A timed unit of work over frame indices.
pub struct BenchComponent<'a> {
    pub stage: Stage,
    pub name: String,
    /// Published timing on the original hardware; for reference only.
    pub reference_ms: Option<f64>,
    pub run: Box<dyn Fn(usize) -> Result<()> + Sync + 'a>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub stage: Stage,
    pub component: String,
    pub mean_ms: f64,
    pub reference_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: usize,
    pub repetitions: usize,
    pub rows: Vec<TimingRow>,
    /// Sum of the component means.
    pub end_to_end_ms: f64,
    pub reference_end_to_end_ms: Option<f64>,
}

impl TimingReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<20} {:<16} {:>10} {:>14}\n",
            "stage", "component", "ms/frame", "reference ms"
        );
        let reference = |r: Option<f64>| r.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<20} {:<16} {:>10.3} {:>14}\n",
                r.stage.label(),
                r.component,
                r.mean_ms,
                reference(r.reference_ms)
            ));
        }
        out.push_str(&format!(
            "{:<20} {:<16} {:>10.3} {:>14}\n",
            "End-to-end",
            "sum",
            self.end_to_end_ms,
            reference(self.reference_end_to_end_ms)
        ));
        out
    }

    /// `stage,component,mean_ms,reference_ms` rows, ending with the sum.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("stage,component,mean_ms,reference_ms\n");
        let reference = |r: Option<f64>| r.map_or_else(String::new, |v| format!("{v}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{}\n",
                r.stage.label(),
                r.component,
                r.mean_ms,
                reference(r.reference_ms)
            ));
        }
        out.push_str(&format!(
            "End-to-end,sum,{:.6},{}\n",
            self.end_to_end_ms,
            reference(self.reference_end_to_end_ms)
        ));
        fs::write(path, out).map_err(NetsError::io(path))
    }
}

/// Wall-clock milliseconds per frame of each component, averaged over
/// `repetitions` passes of `frames` frames. Components run one at a time on
/// the calling thread.
pub fn timing_bench(components: &[BenchComponent<'_>], frames: usize, repetitions: usize) -> Result<TimingReport> {
    if components.is_empty() || frames == 0 || repetitions == 0 {
        return Err(NetsError::Empty("timing run".into()));
    }
    let mut rows = Vec::with_capacity(components.len());
    for c in components {
        // One untimed frame so lazy allocations do not land in the first pass.
        (c.run)(0)?;
        let start = Instant::now();
        for _ in 0..repetitions {
            for f in 0..frames {
                (c.run)(f)?;
            }
        }
        let ms = start.elapsed().as_secs_f64() * 1e3 / (frames * repetitions) as f64;
        rows.push(TimingRow {
            stage: c.stage,
            component: c.name.clone(),
            mean_ms: ms,
            reference_ms: c.reference_ms,
        });
    }
    let end_to_end_ms = rows.iter().map(|r| r.mean_ms).sum();
    let reference_end_to_end_ms = rows.iter().map(|r| r.reference_ms).sum();
    Ok(TimingReport {
        frames,
        repetitions,
        rows,
        end_to_end_ms,
        reference_end_to_end_ms,
    })
}
