//! Conditional GAN translating unlit albedo renders into shaded frontal frames.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use egoface_core::camera::{PerspectiveCamera, Pose};
use egoface_core::capture::{load_frame, DatasetManifest, Split};
use egoface_core::face::{FaceBasis, ParamVector};
use egoface_core::render::{rasterize_albedo, Image};
use egoface_nn::loss::{bce, l1, PROB_CLAMP};
use egoface_nn::{
    adam_step, backward, build_network, forward, forward_with_cache, io, AdamConfig, ForwardCache, Gradients, Layer,
    Mode, NetworkSpec, NetworkState, Real, Tensor,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{concat_channels, epoch_order, image_tensor, mean_gradients, mix_seed, resized, tensor_image};
use crate::error::{NetsError, Result};

/// Encoder widths E1..E7 of the full generator.
pub const FULL_ENCODER_CHANNELS: [usize; 7] = [64, 128, 256, 512, 512, 512, 512];
/// Encoders kept by the optimized generator (E2..E5).
pub const OPTIMIZED_ENCODERS: std::ops::RangeInclusive<usize> = 2..=5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanVariant {
    Full,
    Optimized,
}

impl GanVariant {
    pub fn name(self) -> &'static str {
        match self {
            GanVariant::Full => "full",
            GanVariant::Optimized => "optimized",
        }
    }

    /// One-based encoder indices present in this variant.
    pub fn encoders(self) -> Vec<usize> {
        match self {
            GanVariant::Full => (1..=7).collect(),
            GanVariant::Optimized => OPTIMIZED_ENCODERS.collect(),
        }
    }
}

impl fmt::Display for GanVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GanVariant {
    type Err = NetsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GanVariant::Full),
            "optimized" => Ok(GanVariant::Optimized),
            other => Err(NetsError::Config(format!("unknown generator variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub variant: GanVariant,
    /// Side of the square input and output frames.
    pub image_size: usize,
    /// Albedo frames stacked as generator input, centred on the output frame.
    pub temporal_window: usize,
    /// Every generator width is divided by this (1 keeps the full widths).
    pub channel_divisor: usize,
    /// Width of the first discriminator layer.
    pub discriminator_width: usize,
    /// Weight of the L1 term.
    pub lambda: f64,
    /// Weight of the adversarial term in the generator objective.
    pub adversarial_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig::desk(GanVariant::Full)
    }
}

impl GanConfig {
    /// Reduced-scale training setup: half the frame size, narrower layers.
    pub fn desk(variant: GanVariant) -> Self {
        let adam = AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            ..AdamConfig::default()
        };
        let (image_size, temporal_window) = match variant {
            GanVariant::Full => (128, 3),
            GanVariant::Optimized => (64, 1),
        };
        GanConfig {
            variant,
            image_size,
            temporal_window,
            channel_divisor: 16,
            discriminator_width: 4,
            lambda: 10.0,
            adversarial_weight: 1.0,
            batch_size: 12,
            epochs: 15,
            generator_adam: adam,
            discriminator_adam: adam,
        }
    }

    /// Full-size frames and layer widths.
    pub fn paper(variant: GanVariant) -> Self {
        GanConfig {
            image_size: match variant {
                GanVariant::Full => 256,
                GanVariant::Optimized => 128,
            },
            channel_divisor: 1,
            discriminator_width: 64,
            epochs: 200,
            ..GanConfig::desk(variant)
        }
    }

    /// Input sizes must halve cleanly through every encoder.
    pub fn size_multiple(&self) -> usize {
        1 << self.variant.encoders().len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetsError::Config(m));
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !self.adversarial_weight.is_finite() || self.adversarial_weight < 0.0 {
            return bad(format!(
                "adversarial weight must be non-negative, got {}",
                self.adversarial_weight
            ));
        }
        if self.temporal_window == 0 || self.temporal_window.is_multiple_of(2) {
            return bad(format!("temporal window must be odd, got {}", self.temporal_window));
        }
        let m = self.size_multiple();
        if self.image_size < m || !self.image_size.is_multiple_of(m) || self.image_size < 16 {
            return bad(format!(
                "the {} generator needs an image size that is a multiple of {m}, got {}",
                self.variant, self.image_size
            ));
        }
        if self.channel_divisor == 0 || self.discriminator_width == 0 || self.batch_size == 0 {
            return bad("divisor, discriminator width and batch size must be positive".into());
        }
        self.generator_adam.validate()?;
        self.discriminator_adam.validate()?;
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        3 * self.temporal_window
    }

    fn width(&self, encoder: usize) -> usize {
        (FULL_ENCODER_CHANNELS[encoder - 1] / self.channel_divisor).max(1)
    }
}

/// A named block of the generator and the index of its last layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRow {
    pub name: String,
    pub layer: usize,
}

/// Output size and width of one generator block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub size: usize,
    pub channels: usize,
}

/// U-Net generator: stride-2 encoders, a same-size bottleneck decoder at the
/// deepest encoder, transposed-conv decoders with a skip from the encoder of
/// the same index, and a final upsampling to RGB squashed into [0, 1].
pub fn generator_spec(cfg: &GanConfig) -> Result<(NetworkSpec, Vec<StageRow>)> {
    cfg.validate()?;
    let encoders = cfg.variant.encoders();
    let mut layers = Vec::new();
    let mut rows = Vec::new();
    let mut skip_of = Vec::new();
    let mut cin = cfg.input_channels();
    for (i, &k) in encoders.iter().enumerate() {
        let c = cfg.width(k);
        // Instance norm is skipped on the first block and on 1x1 maps, where
        // it would zero every activation.
        let norm = i > 0 && cfg.image_size >> (i + 1) > 1;
        layers.push(Layer::Conv {
            in_channels: cin,
            out_channels: c,
            kernel: 4,
            stride: 2,
            padding: 1,
            bias: !norm,
        });
        if norm {
            layers.push(Layer::InstanceNorm { channels: c });
        }
        layers.push(Layer::LeakyRelu { slope: 0.2 });
        rows.push(StageRow {
            name: format!("Encoder{k}"),
            layer: layers.len() - 1,
        });
        skip_of.push(layers.len() - 1);
        cin = c;
    }
    for (i, &k) in encoders.iter().enumerate().rev() {
        let c = cfg.width(k);
        let norm = cfg.image_size >> (i + 1) > 1;
        if i + 1 == encoders.len() {
            layers.push(Layer::Conv {
                in_channels: cin,
                out_channels: c,
                kernel: 3,
                stride: 1,
                padding: 1,
                bias: !norm,
            });
        } else {
            layers.push(Layer::ConvTranspose {
                in_channels: cin,
                out_channels: c,
                kernel: 4,
                stride: 2,
                padding: 1,
                bias: !norm,
            });
        }
        if norm {
            layers.push(Layer::InstanceNorm { channels: c });
        }
        layers.push(Layer::Relu);
        rows.push(StageRow {
            name: format!("Decoder{k}"),
            layer: layers.len() - 1,
        });
        layers.push(Layer::Concat { source: skip_of[i] });
        cin = 2 * c;
    }
    layers.push(Layer::ConvTranspose {
        in_channels: cin,
        out_channels: 3,
        kernel: 4,
        stride: 2,
        padding: 1,
        bias: true,
    });
    layers.push(Layer::Tanh);
    layers.push(Layer::Affine { scale: 0.5, shift: 0.5 });
    let spec = NetworkSpec::new(vec![cfg.input_channels(), cfg.image_size, cfg.image_size], layers)?;
    Ok((spec, rows))
}

/// Output size and channel count of each named block.
pub fn architecture_table(spec: &NetworkSpec, rows: &[StageRow]) -> Result<Vec<TableRow>> {
    let shapes = spec.activation_shapes()?;
    rows.iter()
        .map(|r| {
            let s = shapes
                .get(r.layer + 1)
                .ok_or_else(|| NetsError::Config(format!("{} points past the last layer", r.name)))?;
            Ok(TableRow {
                name: r.name.clone(),
                size: s[1],
                channels: s[0],
            })
        })
        .collect()
}

/// Patch classifier over the albedo window stacked with a candidate frame:
/// three stride-2 convolutions and a per-patch sigmoid.
pub fn discriminator_spec(cfg: &GanConfig) -> Result<NetworkSpec> {
    cfg.validate()?;
    let c = cfg.discriminator_width;
    let layers = vec![
        Layer::Conv {
            in_channels: cfg.input_channels() + 3,
            out_channels: c,
            kernel: 2,
            stride: 2,
            padding: 0,
            bias: true,
        },
        Layer::LeakyRelu { slope: 0.2 },
        Layer::Conv {
            in_channels: c,
            out_channels: 2 * c,
            kernel: 4,
            stride: 2,
            padding: 1,
            bias: false,
        },
        Layer::InstanceNorm { channels: 2 * c },
        Layer::LeakyRelu { slope: 0.2 },
        Layer::Conv {
            in_channels: 2 * c,
            out_channels: 1,
            kernel: 4,
            stride: 2,
            padding: 1,
            bias: true,
        },
        Layer::Sigmoid,
    ];
    Ok(NetworkSpec::new(
        vec![cfg.input_channels() + 3, cfg.image_size, cfg.image_size],
        layers,
    )?)
}

/// A generator (or discriminator) with its configuration.
#[derive(Clone, Debug)]
pub struct GanNetwork {
    pub config: GanConfig,
    pub spec: NetworkSpec,
    pub state: NetworkState<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GanMeta {
    config: GanConfig,
}

impl GanNetwork {
    /// Writes `<stem>.egfw`, `<stem>.json` and `<stem>.meta.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(NetsError::io(dir))?;
        io::save_weights(&dir.join(format!("{stem}.egfw")), &self.state)?;
        io::save_spec(&dir.join(format!("{stem}.json")), &self.spec)?;
        let path = dir.join(format!("{stem}.meta.json"));
        let meta = GanMeta {
            config: self.config.clone(),
        };
        fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(NetsError::io(&path))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.meta.json"));
        let text = fs::read_to_string(&path).map_err(NetsError::io(&path))?;
        let meta: GanMeta = serde_json::from_str(&text).map_err(|e| NetsError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let spec = io::load_spec(&dir.join(format!("{stem}.json")))?;
        let state = io::load_weights(&dir.join(format!("{stem}.egfw")), &spec)?;
        Ok(GanNetwork {
            config: meta.config,
            spec,
            state,
        })
    }
}

pub fn build_generator(cfg: &GanConfig, seed: u64) -> Result<GanNetwork> {
    let (spec, _) = generator_spec(cfg)?;
    let state = build_network(&spec, seed)?;
    Ok(GanNetwork {
        config: cfg.clone(),
        spec,
        state,
    })
}

pub fn build_discriminator(cfg: &GanConfig, seed: u64) -> Result<GanNetwork> {
    let spec = discriminator_spec(cfg)?;
    let state = build_network(&spec, seed)?;
    Ok(GanNetwork {
        config: cfg.clone(),
        spec,
        state,
    })
}

/// Mean absolute difference over all pixels and channels.
pub fn loss_l1<T: Real>(generated: &Tensor<T>, ground_truth: &Tensor<T>) -> Result<f64> {
    Ok(l1(generated, ground_truth)?.0.as_f64())
}

/// Values of the adversarial objective for one pair of discriminator maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialLoss {
    /// `E[log D(X, Y)] + E[log(1 - D(X, G(X)))]`, which the discriminator maximizes.
    pub objective: f64,
    /// The negated objective, which the discriminator minimizes.
    pub discriminator: f64,
    /// Non-saturating generator term `-E[log D(X, G(X))]`.
    pub generator: f64,
}

fn clamped_probabilities<T: Real>(p: &Tensor<T>) -> Result<Vec<f64>> {
    p.data()
        .iter()
        .map(|&v| {
            let v = v.as_f64();
            if (0.0..=1.0).contains(&v) {
                Ok(v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            } else {
                Err(NetsError::Config(format!("discriminator output {v} outside [0, 1]")))
            }
        })
        .collect()
}

/// Adversarial losses with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn loss_adv<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<AdversarialLoss> {
    let real = clamped_probabilities(d_real)?;
    let fake = clamped_probabilities(d_fake)?;
    if real.is_empty() || fake.is_empty() {
        return Err(NetsError::Empty("discriminator output".into()));
    }
    let mean = |v: &[f64], f: fn(f64) -> f64| v.iter().map(|&p| f(p)).sum::<f64>() / v.len() as f64;
    let log_real = mean(&real, f64::ln);
    let log_not_fake = mean(&fake, |p| (1.0 - p).ln());
    let objective = log_real + log_not_fake;
    Ok(AdversarialLoss {
        objective,
        discriminator: -objective,
        generator: -mean(&fake, f64::ln),
    })
}

/// Generator objective split into its terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    /// Unweighted non-saturating adversarial term.
    pub adversarial: f64,
    pub l1: f64,
    /// `adversarial_weight * adversarial + lambda * l1`, accumulated in one pass.
    pub total: f64,
}

impl GeneratorLoss {
    /// Absolute gap between `total` and its weighted terms.
    pub fn decomposition_gap(&self, lambda: f64, adversarial_weight: f64) -> f64 {
        (self.total - (adversarial_weight * self.adversarial + lambda * self.l1)).abs()
    }
}

/// Generator objective and its gradient with respect to the generated frame,
/// given the discriminator pass on (window, fake).
#[allow(clippy::too_many_arguments)]
pub fn generator_loss_from_pass<T: Real>(
    disc_spec: &NetworkSpec,
    disc_state: &NetworkState<T>,
    d_fake: &Tensor<T>,
    fake_cache: &ForwardCache<T>,
    fake: &Tensor<T>,
    truth: &Tensor<T>,
    lambda: f64,
    adversarial_weight: f64,
) -> egoface_nn::Result<(GeneratorLoss, Tensor<T>)> {
    let (_, adv_grad) = bce(d_fake, 1.0)?;
    let (_, l1_grad) = l1(fake, truth)?;
    let neg_log = |p: &T| -p.as_f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
    let abs_diff = |(g, y): (&T, &T)| (g.as_f64() - y.as_f64()).abs();
    let patches = d_fake.len() as f64;
    let pixels = fake.len() as f64;
    let adversarial = d_fake.data().iter().map(neg_log).sum::<f64>() / patches;
    let l1_value = fake.data().iter().zip(truth.data()).map(abs_diff).sum::<f64>() / pixels;
    // One interleaved pass over both terms, independent of the reductions above.
    let mut total = 0.0;
    for p in d_fake.data() {
        total += adversarial_weight * neg_log(p) / patches;
    }
    for pair in fake.data().iter().zip(truth.data()) {
        total += lambda * abs_diff(pair) / pixels;
    }
    let mut upstream = adv_grad;
    upstream.data_mut().iter_mut().for_each(|v| *v *= T::lit(adversarial_weight));
    let (_, dinput) = backward(disc_spec, disc_state, fake_cache, &upstream)?;
    let offset = dinput.len() - fake.len();
    let lam = T::lit(lambda);
    let grad: Vec<T> = dinput.data()[offset..]
        .iter()
        .zip(l1_grad.data())
        .map(|(&a, &b)| a + lam * b)
        .collect();
    Ok((
        GeneratorLoss {
            adversarial,
            l1: l1_value,
            total,
        },
        Tensor::new(fake.shape().to_vec(), grad)?,
    ))
}

/// Generator objective for one window and candidate, running the
/// discriminator on their channel stack.
pub fn generator_loss<T: Real>(
    disc_spec: &NetworkSpec,
    disc_state: &NetworkState<T>,
    window: &Tensor<T>,
    fake: &Tensor<T>,
    truth: &Tensor<T>,
    lambda: f64,
    adversarial_weight: f64,
) -> egoface_nn::Result<(GeneratorLoss, Tensor<T>)> {
    let mut data = window.data().to_vec();
    data.extend_from_slice(fake.data());
    let shape = vec![window.shape()[0] + fake.shape()[0], fake.shape()[1], fake.shape()[2]];
    let input = Tensor::new(shape, data)?;
    let (d_fake, cache) = forward_with_cache(disc_spec, disc_state, &input, Mode::Inference)?;
    generator_loss_from_pass(disc_spec, disc_state, &d_fake, &cache, fake, truth, lambda, adversarial_weight)
}

/// Albedo and frontal frames of a translation dataset at one resolution,
/// stored as 8-bit planes.
#[derive(Clone, Debug)]
pub struct TranslationSet {
    pub image_size: usize,
    albedo: Vec<Vec<u8>>,
    front: Vec<Vec<u8>>,
    /// Range of entry indices of each entry's sequence.
    sequence_range: Vec<(usize, usize)>,
    pub splits: Vec<Split>,
}

fn planar_bytes(img: &Image) -> Vec<u8> {
    image_tensor(img)
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn bytes_tensor(bytes: &[u8], size: usize) -> Tensor<f32> {
    let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![3, size, size], data).expect("planar frame")
}

impl TranslationSet {
    /// Loads every entry of a translation dataset, area-resized to `image_size`.
    pub fn load(dir: &Path, manifest: &DatasetManifest, image_size: usize) -> Result<Self> {
        let mut set = TranslationSet {
            image_size,
            albedo: Vec::new(),
            front: Vec::new(),
            sequence_range: Vec::new(),
            splits: Vec::new(),
        };
        let mut start = 0;
        for (i, e) in manifest.entries.iter().enumerate() {
            let albedo = e.albedo.as_ref().ok_or_else(|| NetsError::Format {
                path: dir.to_path_buf(),
                message: format!("entry {i} has no albedo render"),
            })?;
            set.albedo.push(planar_bytes(&resized(&load_frame(dir, albedo)?, image_size)?));
            set.front.push(planar_bytes(&resized(&load_frame(dir, &e.front)?, image_size)?));
            set.splits.push(e.split);
            if i > 0 && manifest.entries[i - 1].sequence != e.sequence {
                start = i;
            }
            set.sequence_range.push((start, 0));
        }
        // Fill in sequence ends now that every start is known.
        let n = set.sequence_range.len();
        let mut end = n;
        for i in (0..n).rev() {
            set.sequence_range[i].1 = end;
            if set.sequence_range[i].0 == i {
                end = i;
            }
        }
        if set.is_empty() {
            return Err(NetsError::Empty("translation dataset".into()));
        }
        Ok(set)
    }

    /// Builds a set from in-memory frames forming one sequence.
    pub fn from_frames(albedo: &[Image], front: &[Image], splits: &[Split], image_size: usize) -> Result<Self> {
        if albedo.len() != front.len() || albedo.len() != splits.len() || albedo.is_empty() {
            return Err(NetsError::Size("albedo, frontal and split lists must match".into()));
        }
        let n = albedo.len();
        Ok(TranslationSet {
            image_size,
            albedo: albedo
                .iter()
                .map(|i| resized(i, image_size).map(|r| planar_bytes(&r)))
                .collect::<Result<_>>()?,
            front: front
                .iter()
                .map(|i| resized(i, image_size).map(|r| planar_bytes(&r)))
                .collect::<Result<_>>()?,
            sequence_range: vec![(0, n); n],
            splits: splits.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.front.len()
    }

    pub fn is_empty(&self) -> bool {
        self.front.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn front(&self, entry: usize) -> Tensor<f32> {
        bytes_tensor(&self.front[entry], self.image_size)
    }

    pub fn albedo(&self, entry: usize) -> Tensor<f32> {
        bytes_tensor(&self.albedo[entry], self.image_size)
    }

    /// Entry indices of a centred window, clamped at the sequence ends.
    pub fn window_indices(&self, entry: usize, window: usize) -> Vec<usize> {
        let (start, end) = self.sequence_range[entry];
        let half = (window / 2) as isize;
        (-half..=half)
            .map(|d| (entry as isize + d).clamp(start as isize, end as isize - 1) as usize)
            .collect()
    }

    /// Stacked albedo window around `entry`.
    pub fn window(&self, entry: usize, window: usize) -> Tensor<f32> {
        let frames: Vec<Tensor<f32>> = self.window_indices(entry, window).iter().map(|&i| self.albedo(i)).collect();
        let refs: Vec<&Tensor<f32>> = frames.iter().collect();
        concat_channels(&refs).expect("frames share one size")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub l1: f64,
    pub g_adv: f64,
    pub d_loss: f64,
}

/// Writes `epoch,l1,g_adv,d_loss` rows.
pub fn write_gan_curve(path: &Path, curve: &[GanEpoch]) -> Result<()> {
    let mut out = String::from("epoch,l1,g_adv,d_loss\n");
    for e in curve {
        out.push_str(&format!("{},{:.9e},{:.9e},{:.9e}\n", e.epoch, e.l1, e.g_adv, e.d_loss));
    }
    let mut file = fs::File::create(path).map_err(NetsError::io(path))?;
    file.write_all(out.as_bytes()).map_err(NetsError::io(path))
}

struct SampleStep {
    loss: GeneratorLoss,
    d_loss: f64,
    g_grads: Gradients<f32>,
    d_grads: Gradients<f32>,
}

fn gan_sample_step(
    generator: &GanNetwork,
    discriminator: &GanNetwork,
    set: &TranslationSet,
    entry: usize,
    mode: Mode,
) -> Result<SampleStep> {
    let cfg = &generator.config;
    let window = set.window(entry, cfg.temporal_window);
    let truth = set.front(entry);
    let (fake, g_cache) = forward_with_cache(&generator.spec, &generator.state, &window, mode)?;
    let (ds, dst) = (&discriminator.spec, &discriminator.state);
    let (d_real, real_cache) = forward_with_cache(ds, dst, &concat_channels(&[&window, &truth])?, mode)?;
    let (d_fake, fake_cache) = forward_with_cache(ds, dst, &concat_channels(&[&window, &fake])?, mode)?;
    let adv = loss_adv(&d_real, &d_fake)?;
    let (_, up_real) = bce(&d_real, 1.0)?;
    let (_, up_fake) = bce(&d_fake, 0.0)?;
    let (mut d_grads, _) = backward(ds, dst, &real_cache, &up_real)?;
    d_grads.accumulate(&backward(ds, dst, &fake_cache, &up_fake)?.0);
    let (loss, dfake) = generator_loss_from_pass(
        ds,
        dst,
        &d_fake,
        &fake_cache,
        &fake,
        &truth,
        cfg.lambda,
        cfg.adversarial_weight,
    )?;
    let (g_grads, _) = backward(&generator.spec, &generator.state, &g_cache, &dfake)?;
    Ok(SampleStep {
        loss,
        d_loss: adv.discriminator,
        g_grads,
        d_grads,
    })
}

/// Adversarial training on the training split. Each batch computes both
/// networks' gradients against the current discriminator, then takes one
/// discriminator ADAM step followed by one generator ADAM step.
pub fn train_cgan(
    set: &TranslationSet,
    cfg: &GanConfig,
    seed: u64,
) -> Result<(GanNetwork, GanNetwork, Vec<GanEpoch>)> {
    cfg.validate()?;
    if set.image_size != cfg.image_size {
        return Err(NetsError::Size(format!(
            "dataset frames are {} pixels, the {} generator expects {}",
            set.image_size, cfg.variant, cfg.image_size
        )));
    }
    let train = set.indices(Split::Train);
    if train.is_empty() {
        return Err(NetsError::Empty("translation training split".into()));
    }
    let mut generator = build_generator(cfg, mix_seed(seed, 1, 0))?;
    let mut discriminator = build_discriminator(cfg, mix_seed(seed, 2, 0))?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), seed, epoch);
        let (mut l1_sum, mut adv_sum, mut d_sum) = (0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (g_ref, d_ref) = (&generator, &discriminator);
            let steps: Vec<SampleStep> = batch
                .par_iter()
                .map(|&k| {
                    let mode = Mode::Train {
                        seed: mix_seed(seed, epoch as u64, k as u64),
                    };
                    gan_sample_step(g_ref, d_ref, set, train[k], mode)
                })
                .collect::<Result<_>>()?;
            for s in &steps {
                let gap = s.loss.decomposition_gap(cfg.lambda, cfg.adversarial_weight);
                if !s.loss.total.is_finite() || !s.d_loss.is_finite() {
                    return Err(NetsError::NonFinite(format!("GAN losses at epoch {} batch {b}", epoch + 1)));
                }
                if gap > 1e-9 * s.loss.total.abs().max(1.0) {
                    return Err(NetsError::NonFinite(format!(
                        "generator objective {} does not split into its terms (gap {gap:e})",
                        s.loss.total
                    )));
                }
                l1_sum += s.loss.l1;
                adv_sum += s.loss.adversarial;
                d_sum += s.d_loss;
            }
            let (g_parts, d_parts): (Vec<_>, Vec<_>) = steps.into_iter().map(|s| (s.g_grads, s.d_grads)).unzip();
            let d_grads = mean_gradients(d_parts).expect("non-empty batch");
            let g_grads = mean_gradients(g_parts).expect("non-empty batch");
            adam_step(&mut discriminator.state, &d_grads, &cfg.discriminator_adam)?;
            adam_step(&mut generator.state, &g_grads, &cfg.generator_adam)?;
        }
        let n = train.len() as f64;
        curve.push(GanEpoch {
            epoch: epoch + 1,
            l1: l1_sum / n,
            g_adv: adv_sum / n,
            d_loss: d_sum / n,
        });
    }
    Ok((generator, discriminator, curve))
}

/// Unlit render under `pose`, quantized to 8 bits like the recorded albedo
/// frames and area-resized to `size`.
pub fn albedo_input(
    basis: &FaceBasis,
    params: &ParamVector,
    cam: &PerspectiveCamera,
    pose: &Pose,
    background: [f64; 3],
    size: usize,
) -> Result<Image> {
    let render = rasterize_albedo(basis, params, cam, pose, background)?;
    resized(&render.to_rgb8().to_image(), size)
}

/// Generator output for a stacked window tensor.
pub fn translate_tensor(generator: &GanNetwork, window: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(forward(&generator.spec, &generator.state, window, Mode::Inference)?)
}

/// Translates a window of albedo frames (oldest first) into the frame at its centre.
pub fn translate(generator: &GanNetwork, window: &[Image]) -> Result<Image> {
    let cfg = &generator.config;
    if window.len() != cfg.temporal_window {
        return Err(NetsError::Size(format!(
            "expected a window of {} frames, got {}",
            cfg.temporal_window,
            window.len()
        )));
    }
    let mut tensors = Vec::with_capacity(window.len());
    for img in window {
        if img.width() != cfg.image_size || img.height() != cfg.image_size {
            return Err(NetsError::Size(format!(
                "{}x{} frame for a {}-pixel generator",
                img.width(),
                img.height(),
                cfg.image_size
            )));
        }
        tensors.push(image_tensor(img));
    }
    let refs: Vec<&Tensor<f32>> = tensors.iter().collect();
    tensor_image(&translate_tensor(generator, &concat_channels(&refs)?)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Fixed,
    Loop,
}

/// Test-time choice of head pose for the frontal render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSelection {
    pub mode: SelectionMode,
    pub poses: Vec<Pose>,
    /// Frames each pose is held in loop mode.
    pub hold_frames: usize,
    /// Loop back and forth (0 1 2 3 2 1 0 ...) instead of wrapping around.
    pub ping_pong: bool,
}

impl PoseSelection {
    pub fn fixed(pose: Pose) -> Self {
        PoseSelection {
            mode: SelectionMode::Fixed,
            poses: vec![pose],
            hold_frames: 1,
            ping_pong: false,
        }
    }

    /// Up to `count` poses spread evenly over a recorded sequence.
    pub fn from_sequence(params: &[ParamVector], count: usize, mode: SelectionMode, ping_pong: bool) -> Result<Self> {
        if params.is_empty() || count == 0 {
            return Err(NetsError::Empty("pose source sequence".into()));
        }
        let count = count.min(params.len());
        let poses = (0..count)
            .map(|k| {
                let p = &params[k * params.len() / count];
                Pose {
                    rotation: p.rotation,
                    translation: p.translation,
                }
            })
            .collect();
        Ok(PoseSelection {
            mode,
            poses,
            hold_frames: 1,
            ping_pong,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.is_empty() {
            return Err(NetsError::Empty("pose selection".into()));
        }
        if self.hold_frames == 0 {
            return Err(NetsError::Config("poses must be held for at least one frame".into()));
        }
        Ok(())
    }

    /// Index into `poses` used at `frame`.
    pub fn pose_index(&self, frame: usize) -> usize {
        let n = self.poses.len();
        if self.mode == SelectionMode::Fixed || n <= 1 {
            return 0;
        }
        let step = frame / self.hold_frames.max(1);
        if !self.ping_pong {
            return step % n;
        }
        let period = 2 * (n - 1);
        let t = step % period;
        if t < n {
            t
        } else {
            period - t
        }
    }
}

pub fn select_pose(selection: &PoseSelection, frame: usize) -> Pose {
    selection.poses[selection.pose_index(frame)]
}
