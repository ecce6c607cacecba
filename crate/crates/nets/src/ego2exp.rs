//! Expression regression from a single masked head-mounted camera image.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use egoface_core::camera::FisheyeCamera;
use egoface_core::capture::{load_frame, read_params, DatasetManifest, Split};
use egoface_core::face::{FaceBasis, ParamVector};
use egoface_core::render::{rasterize_egocentric, Image, Raster};
use egoface_nn::loss::mse;
use egoface_nn::{
    adam_step, backward, build_network, forward, forward_with_cache, io, AdamConfig, Layer, Mode,
    NetworkSpec, NetworkState, Tensor,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_order, image_tensor, mean_gradients, mix_seed, resized};
use crate::error::{NetsError, Result};

/// Minimum fraction of set pixels in a usable face mask.
pub const MIN_MASK_COVERAGE: f64 = 0.05;

/// Backbone size, named after the network each one stands in for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorPreset {
    /// Widest stack; slowest and most accurate.
    VggAnalog,
    /// Mid-size stack; the default.
    ResnetAnalog,
    /// Narrowest stack.
    AlexnetAnalog,
}

impl RegressorPreset {
    pub const ALL: [RegressorPreset; 3] = [
        RegressorPreset::VggAnalog,
        RegressorPreset::ResnetAnalog,
        RegressorPreset::AlexnetAnalog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegressorPreset::VggAnalog => "vgg-analog",
            RegressorPreset::ResnetAnalog => "resnet-analog",
            RegressorPreset::AlexnetAnalog => "alexnet-analog",
        }
    }

    fn widths(self) -> (Vec<usize>, usize) {
        match self {
            RegressorPreset::VggAnalog => (vec![16, 32, 64, 128, 128], 256),
            RegressorPreset::ResnetAnalog => (vec![8, 16, 32, 64, 64], 128),
            RegressorPreset::AlexnetAnalog => (vec![4, 8, 16, 32, 32], 64),
        }
    }
}

impl fmt::Display for RegressorPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegressorPreset {
    type Err = NetsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgg-analog" | "large" => Ok(RegressorPreset::VggAnalog),
            "resnet-analog" | "small" => Ok(RegressorPreset::ResnetAnalog),
            "alexnet-analog" | "tiny" => Ok(RegressorPreset::AlexnetAnalog),
            other => Err(NetsError::Config(format!("unknown regressor preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub preset: RegressorPreset,
    /// Side of the square network input after area resizing.
    pub input_size: usize,
    /// Number of expression coefficients.
    pub output_dim: usize,
    /// Output channels of the stride-2 conv blocks.
    pub channels: Vec<usize>,
    /// Width of the hidden dense layer.
    pub hidden: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig::preset(RegressorPreset::ResnetAnalog, 12)
    }
}

impl RegressorConfig {
    pub fn preset(preset: RegressorPreset, output_dim: usize) -> Self {
        let (channels, hidden) = preset.widths();
        RegressorConfig {
            preset,
            input_size: 64,
            output_dim,
            channels,
            hidden,
            dropout: 0.5,
            batch_size: 32,
            epochs: 50,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetsError::Config(m));
        if self.input_size < 8 {
            return bad(format!("input size {} is too small", self.input_size));
        }
        if self.output_dim == 0 || self.hidden == 0 {
            return bad("output and hidden widths must be positive".into());
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("the conv stack needs at least one block of positive width".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        self.adam.validate()?;
        Ok(())
    }

    /// Layer graph: stride-2 3x3 conv blocks, then two dense layers with no
    /// output nonlinearity.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        self.validate()?;
        let mut layers = Vec::new();
        let mut cin = 3;
        for &c in &self.channels {
            layers.push(Layer::Conv {
                in_channels: cin,
                out_channels: c,
                kernel: 3,
                stride: 2,
                padding: 1,
                bias: true,
            });
            layers.push(Layer::LeakyRelu { slope: 0.1 });
            cin = c;
        }
        let body = NetworkSpec::new(vec![3, self.input_size, self.input_size], layers.clone())?;
        let flat: usize = body.output_shape.iter().product();
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense {
            inputs: flat,
            outputs: self.hidden,
        });
        layers.push(Layer::Relu);
        if self.dropout > 0.0 {
            layers.push(Layer::Dropout { rate: self.dropout });
        }
        layers.push(Layer::Dense {
            inputs: self.hidden,
            outputs: self.output_dim,
        });
        Ok(NetworkSpec::new(vec![3, self.input_size, self.input_size], layers)?)
    }
}

pub fn build_regressor(cfg: &RegressorConfig, seed: u64) -> Result<(NetworkSpec, NetworkState<f32>)> {
    let spec = cfg.network_spec()?;
    let state = build_network(&spec, seed)?;
    Ok((spec, state))
}

/// Binary face region of the head-mounted view at network input resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaceMask {
    pub size: usize,
    /// Row-major; `true` keeps the pixel.
    pub set: Vec<bool>,
}

impl FaceMask {
    pub fn full(size: usize) -> Self {
        FaceMask {
            size,
            set: vec![true; size * size],
        }
    }

    pub fn empty(size: usize) -> Self {
        FaceMask {
            size,
            set: vec![false; size * size],
        }
    }

    /// Marks every `size`-grid cell containing a covered pixel, grown by
    /// `dilation` cells so small expression changes stay inside.
    pub fn from_raster(raster: &Raster, size: usize, dilation: usize) -> Result<Self> {
        let (w, h) = (raster.image.width(), raster.image.height());
        if size == 0 || w != h || w % size != 0 {
            return Err(NetsError::Size(format!("cannot reduce a {w}x{h} raster to {size}x{size}")));
        }
        let block = w / size;
        let mut core = vec![false; size * size];
        for y in 0..h {
            for x in 0..w {
                if raster.covered(x, y) {
                    core[(y / block) * size + x / block] = true;
                }
            }
        }
        let mut set = core.clone();
        let d = dilation as isize;
        for y in 0..size as isize {
            for x in 0..size as isize {
                if !core[(y as usize) * size + x as usize] {
                    continue;
                }
                for yy in (y - d).max(0)..=(y + d).min(size as isize - 1) {
                    for xx in (x - d).max(0)..=(x + d).min(size as isize - 1) {
                        set[yy as usize * size + xx as usize] = true;
                    }
                }
            }
        }
        Ok(FaceMask { size, set })
    }

    /// Mask drawn once from a render of one frame; the camera is fixed to
    /// the face, so it holds for the whole recording.
    pub fn for_frame(basis: &FaceBasis, params: &ParamVector, cam: &FisheyeCamera, size: usize) -> Result<Self> {
        let mesh = basis.shaded_mesh(params)?;
        let raster = rasterize_egocentric(&mesh, cam, [0.0; 3]);
        let mask = FaceMask::from_raster(&raster, size, 1)?;
        mask.validate()?;
        Ok(mask)
    }

    pub fn coverage(&self) -> f64 {
        self.set.iter().filter(|&&s| s).count() as f64 / self.set.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.set.len() != self.size * self.size {
            return Err(NetsError::Size("mask data does not match its size".into()));
        }
        if self.coverage() < MIN_MASK_COVERAGE {
            return Err(NetsError::Config(format!(
                "face mask covers {:.1}% of the image, below the {:.0}% minimum",
                100.0 * self.coverage(),
                100.0 * MIN_MASK_COVERAGE
            )));
        }
        Ok(())
    }

    /// Binary PGM, 255 for set pixels.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        bytes.extend(self.set.iter().map(|&s| if s { 255u8 } else { 0 }));
        fs::write(path, bytes).map_err(NetsError::io(path))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(NetsError::io(path))?;
        let bad = || NetsError::Format {
            path: path.to_path_buf(),
            message: "expected a square binary P5 mask".into(),
        };
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        let pixels = &bytes[(pos + 1).min(bytes.len())..];
        let size: usize = fields[1].parse().map_err(|_| bad())?;
        if fields[0] != "P5" || fields[1] != fields[2] || pixels.len() != size * size {
            return Err(bad());
        }
        Ok(FaceMask {
            size,
            set: pixels.iter().map(|&p| p > 127).collect(),
        })
    }
}

/// Pixel-wise product of image and mask; masked-out pixels become black.
pub fn apply_mask(image: &Image, mask: &FaceMask) -> Result<Image> {
    if image.width() != mask.size || image.height() != mask.size {
        return Err(NetsError::Size(format!(
            "{}x{} image vs {}x{} mask",
            image.width(),
            image.height(),
            mask.size,
            mask.size
        )));
    }
    let mut data = image.data().to_vec();
    for (p, &keep) in mask.set.iter().enumerate() {
        if !keep {
            data[3 * p..3 * p + 3].fill(0.0);
        }
    }
    Ok(Image::from_data(mask.size, mask.size, data)?)
}

/// Network input for one head-mounted frame: resized, then masked.
pub fn prepare_input(image: &Image, mask: &FaceMask) -> Result<Tensor<f32>> {
    Ok(image_tensor(&apply_mask(&resized(image, mask.size)?, mask)?))
}

/// Masked inputs with their ground-truth expressions.
#[derive(Clone, Debug, Default)]
pub struct ExpressionSet {
    pub inputs: Vec<Tensor<f32>>,
    pub targets: Vec<Vec<f64>>,
    /// Manifest entry index of each sample.
    pub entries: Vec<usize>,
}

impl ExpressionSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> ExpressionSet {
        ExpressionSet {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            entries: indices.iter().map(|&i| self.entries[i]).collect(),
        }
    }
}

/// Loads one split of an expression dataset.
pub fn load_expression_set(dir: &Path, manifest: &DatasetManifest, split: Split, mask: &FaceMask) -> Result<ExpressionSet> {
    let params = read_params(dir)?;
    if params.len() != manifest.entries.len() {
        return Err(NetsError::Format {
            path: dir.to_path_buf(),
            message: format!(
                "{} parameter records for {} entries",
                params.len(),
                manifest.entries.len()
            ),
        });
    }
    let mut set = ExpressionSet::default();
    for index in manifest.split_indices(split) {
        let entry = &manifest.entries[index];
        let rel = entry.ego.as_ref().ok_or_else(|| NetsError::Format {
            path: dir.to_path_buf(),
            message: format!("entry {index} has no head-mounted image"),
        })?;
        set.inputs.push(prepare_input(&load_frame(dir, rel)?, mask)?);
        set.targets.push(params[index].params.delta.clone());
        set.entries.push(index);
    }
    Ok(set)
}

/// Per-coefficient mean of a set of expressions.
pub fn mean_expression(targets: &[Vec<f64>]) -> Vec<f64> {
    let n = targets.len().max(1) as f64;
    let dim = targets.first().map_or(0, Vec::len);
    (0..dim).map(|k| targets.iter().map(|t| t[k]).sum::<f64>() / n).collect()
}

/// Mean squared error in prior-sigma units, averaged over coefficients and samples.
pub fn expression_mse(predictions: &[Vec<f64>], targets: &[Vec<f64>], scale: &[f64]) -> f64 {
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        total += p
            .iter()
            .zip(t)
            .zip(scale)
            .map(|((a, b), s)| ((a - b) / s).powi(2))
            .sum::<f64>()
            / scale.len() as f64;
    }
    total / predictions.len().max(1) as f64
}

/// A trained expression regressor with everything inference needs.
#[derive(Clone, Debug)]
pub struct ExpressionRegressor {
    pub config: RegressorConfig,
    pub spec: NetworkSpec,
    pub state: NetworkState<f32>,
    /// Network outputs are expressions divided by this (the prior sigmas).
    pub scale: Vec<f64>,
    pub mask: FaceMask,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegressorMeta {
    config: RegressorConfig,
    scale: Vec<f64>,
}

impl ExpressionRegressor {
    pub fn new(config: RegressorConfig, scale: Vec<f64>, mask: FaceMask, seed: u64) -> Result<Self> {
        if scale.len() != config.output_dim || scale.iter().any(|&s| !(s > 0.0)) {
            return Err(NetsError::Config(format!(
                "need {} positive target scales, got {:?}",
                config.output_dim, scale
            )));
        }
        if mask.size != config.input_size {
            return Err(NetsError::Size(format!(
                "mask size {} vs input size {}",
                mask.size, config.input_size
            )));
        }
        let (spec, state) = build_regressor(&config, seed)?;
        Ok(ExpressionRegressor {
            config,
            spec,
            state,
            scale,
            mask,
        })
    }

    fn forward_input(&self, input: &Tensor<f32>) -> Result<Vec<f64>> {
        let out = forward(&self.spec, &self.state, input, Mode::Inference)?;
        Ok(out.data().iter().zip(&self.scale).map(|(&v, s)| v as f64 * s).collect())
    }

    /// Writes `<stem>.egfw`, `<stem>.json`, `<stem>.meta.json` and `<stem>.mask.pgm`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(NetsError::io(dir))?;
        io::save_weights(&dir.join(format!("{stem}.egfw")), &self.state)?;
        io::save_spec(&dir.join(format!("{stem}.json")), &self.spec)?;
        let meta = RegressorMeta {
            config: self.config.clone(),
            scale: self.scale.clone(),
        };
        let path = dir.join(format!("{stem}.meta.json"));
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&path, text).map_err(NetsError::io(&path))?;
        self.mask.write_pgm(&dir.join(format!("{stem}.mask.pgm")))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.meta.json"));
        let text = fs::read_to_string(&path).map_err(NetsError::io(&path))?;
        let meta: RegressorMeta = serde_json::from_str(&text).map_err(|e| NetsError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let spec = io::load_spec(&dir.join(format!("{stem}.json")))?;
        if spec != meta.config.network_spec()? {
            return Err(NetsError::Format {
                path,
                message: "network spec does not match the stored configuration".into(),
            });
        }
        let state = io::load_weights(&dir.join(format!("{stem}.egfw")), &spec)?;
        let mask = FaceMask::read_pgm(&dir.join(format!("{stem}.mask.pgm")))?;
        Ok(ExpressionRegressor {
            config: meta.config,
            spec,
            state,
            scale: meta.scale,
            mask,
        })
    }
}

/// Estimated expression coefficients for one head-mounted frame.
pub fn predict_expressions(regressor: &ExpressionRegressor, image: &Image) -> Result<Vec<f64>> {
    regressor.forward_input(&prepare_input(image, &regressor.mask)?)
}

/// Predictions for already prepared inputs.
pub fn predict_set(regressor: &ExpressionRegressor, set: &ExpressionSet) -> Result<Vec<Vec<f64>>> {
    set.inputs.par_iter().map(|x| regressor.forward_input(x)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorEpoch {
    pub epoch: usize,
    /// Mean training loss over the epoch, with dropout active.
    pub train_mse: f64,
    /// Held-out loss at the end of the epoch; NaN without held-out data.
    pub val_mse: f64,
}

/// Writes `epoch,train_mse,val_mse` rows.
pub fn write_regressor_curve(path: &Path, curve: &[RegressorEpoch]) -> Result<()> {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for e in curve {
        out.push_str(&format!("{},{:.9e},{:.9e}\n", e.epoch, e.train_mse, e.val_mse));
    }
    let mut file = fs::File::create(path).map_err(NetsError::io(path))?;
    file.write_all(out.as_bytes()).map_err(NetsError::io(path))
}

/// Minimizes the mean squared expression error (in prior-sigma units) with
/// ADAM over seeded-shuffled mini-batches. Losses are reported in the same
/// units as [`expression_mse`].
pub fn train_regressor(
    train: &ExpressionSet,
    validation: &ExpressionSet,
    mut model: ExpressionRegressor,
    seed: u64,
) -> Result<(ExpressionRegressor, Vec<RegressorEpoch>)> {
    if train.is_empty() {
        return Err(NetsError::Empty("expression training set".into()));
    }
    let cfg = model.config.clone();
    let targets: Vec<Tensor<f32>> = train
        .targets
        .iter()
        .map(|t| {
            let v: Vec<f32> = t.iter().zip(&model.scale).map(|(d, s)| (d / s) as f32).collect();
            Tensor::new(vec![v.len()], v)
        })
        .collect::<std::result::Result<_, _>>()?;
    if targets.iter().any(|t| t.len() != cfg.output_dim) {
        return Err(NetsError::Size(format!("targets must have {} coefficients", cfg.output_dim)));
    }
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), seed, epoch);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref = &model;
            let parts: Vec<(f64, egoface_nn::Gradients<f32>)> = batch
                .par_iter()
                .map(|&i| {
                    let mode = Mode::Train {
                        seed: mix_seed(seed, epoch as u64, i as u64),
                    };
                    let (out, cache) = forward_with_cache(&model_ref.spec, &model_ref.state, &train.inputs[i], mode)?;
                    let (loss, grad) = mse(&out, &targets[i])?;
                    let (g, _) = backward(&model_ref.spec, &model_ref.state, &cache, &grad)?;
                    Ok((loss as f64, g))
                })
                .collect::<Result<_>>()?;
            let batch_loss: f64 = parts.iter().map(|p| p.0).sum();
            if !batch_loss.is_finite() {
                return Err(NetsError::NonFinite(format!("regressor loss at epoch {} batch {b}", epoch + 1)));
            }
            loss_sum += batch_loss;
            let grads = mean_gradients(parts.into_iter().map(|p| p.1).collect()).expect("non-empty batch");
            adam_step(&mut model.state, &grads, &cfg.adam)?;
        }
        let val_mse = if validation.is_empty() {
            f64::NAN
        } else {
            expression_mse(&predict_set(&model, validation)?, &validation.targets, &model.scale)
        };
        curve.push(RegressorEpoch {
            epoch: epoch + 1,
            train_mse: loss_sum / train.len() as f64,
            val_mse,
        });
    }
    Ok((model, curve))
}
