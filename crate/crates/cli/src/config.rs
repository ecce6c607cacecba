//! The run configuration: one JSON document with a section per stage.

use std::fs;
use std::path::{Path, PathBuf};

use egoface_core::capture::{CaptureRig, ExportOptions};
use egoface_core::face::ModelDims;
use egoface_core::recon::EnergyConfig;
use egoface_nets::ego2exp::RegressorConfig;
use egoface_nets::exp2vreal::{GanConfig, GanVariant, SelectionMode};
use egoface_nn::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Every module seed is derived from this one.
    pub seed: u64,
    pub basis: BasisSection,
    pub cameras: CaptureRig,
    pub simulator: SimulatorSection,
    pub recon: ReconSection,
    pub ego2exp: RegressorConfig,
    pub exp2vreal: Exp2VRealSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            basis: BasisSection::default(),
            cameras: CaptureRig::default(),
            simulator: SimulatorSection::default(),
            recon: ReconSection::default(),
            ego2exp: RegressorConfig::default(),
            exp2vreal: Exp2VRealSection::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    pub dims: ModelDims,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    /// Room of each head-mounted recording, one sequence per entry.
    pub roaming_scenarios: Vec<usize>,
    /// Room of the tripod recordings used for the translator.
    pub studio_scenario: usize,
    pub studio_sequences: usize,
    pub frames_per_sequence: usize,
    pub export: ExportOptions,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        SimulatorSection {
            roaming_scenarios: vec![0, 1, 2, 3],
            studio_scenario: 0,
            studio_sequences: 3,
            frames_per_sequence: 1000,
            export: ExportOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub energy: EnergyConfig,
    /// Leading frames of the first tripod sequence to fit.
    pub frames: usize,
}

impl Default for ReconSection {
    fn default() -> Self {
        ReconSection {
            energy: EnergyConfig::default(),
            frames: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub mode: SelectionMode,
    /// Poses drawn from the first tripod sequence.
    pub poses: usize,
    pub hold_frames: usize,
    pub ping_pong: bool,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            mode: SelectionMode::Fixed,
            poses: 4,
            hold_frames: 1,
            ping_pong: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp2VRealSection {
    /// Generators trained by `train-exp2vreal`.
    pub variants: Vec<GanVariant>,
    /// Generator used by `reenact`.
    pub reenact_variant: GanVariant,
    pub lambda: f64,
    pub adversarial_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub channel_divisor: usize,
    pub discriminator_width: usize,
    pub full_size: usize,
    pub full_window: usize,
    pub optimized_size: usize,
    pub optimized_window: usize,
    pub selection: SelectionSection,
}

impl Default for Exp2VRealSection {
    fn default() -> Self {
        let full = GanConfig::desk(GanVariant::Full);
        let optimized = GanConfig::desk(GanVariant::Optimized);
        Exp2VRealSection {
            variants: vec![GanVariant::Full, GanVariant::Optimized],
            reenact_variant: GanVariant::Optimized,
            lambda: full.lambda,
            adversarial_weight: full.adversarial_weight,
            batch_size: full.batch_size,
            epochs: full.epochs,
            learning_rate: full.generator_adam.learning_rate,
            beta1: full.generator_adam.beta1,
            channel_divisor: full.channel_divisor,
            discriminator_width: full.discriminator_width,
            full_size: full.image_size,
            full_window: full.temporal_window,
            optimized_size: optimized.image_size,
            optimized_window: optimized.temporal_window,
            selection: SelectionSection::default(),
        }
    }
}

impl Exp2VRealSection {
    pub fn gan_config(&self, variant: GanVariant) -> GanConfig {
        let adam = AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            ..AdamConfig::default()
        };
        let (image_size, temporal_window) = match variant {
            GanVariant::Full => (self.full_size, self.full_window),
            GanVariant::Optimized => (self.optimized_size, self.optimized_window),
        };
        GanConfig {
            variant,
            image_size,
            temporal_window,
            channel_divisor: self.channel_divisor,
            discriminator_width: self.discriminator_width,
            lambda: self.lambda,
            adversarial_weight: self.adversarial_weight,
            batch_size: self.batch_size,
            epochs: self.epochs,
            generator_adam: adam,
            discriminator_adam: adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Head-mounted sequence whose held-out frames `reenact` drives.
    pub reenact_sequence: usize,
    pub reenact_frames: usize,
    pub bench_frames: usize,
    pub bench_repetitions: usize,
    pub bench_components: Vec<String>,
}

/// Names `bench` accepts.
pub const BENCH_COMPONENTS: [&str; 6] = [
    "vgg-analog",
    "resnet-analog",
    "alexnet-analog",
    "albedo",
    "full",
    "optimized",
];

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            reenact_sequence: 0,
            reenact_frames: 50,
            bench_frames: 100,
            bench_repetitions: 2,
            bench_components: BENCH_COMPONENTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            out: PathBuf::from("egoface-out"),
        }
    }
}

/// Fixed offsets added to the global seed, one per consumer.
pub mod seed_offset {
    pub const BASIS: u64 = 1;
    pub const IDENTITY: u64 = 2;
    pub const RECON: u64 = 3;
    pub const REGRESSOR_INIT: u64 = 4;
    pub const REGRESSOR_ORDER: u64 = 5;
    pub const TRANSLATOR: u64 = 6;
    pub const BENCH: u64 = 8;
    /// Head-mounted recording `i` uses `ROAMING + i`.
    pub const ROAMING: u64 = 100;
    /// Tripod recording `i` uses `STUDIO + i`.
    pub const STUDIO: u64 = 200;
}

impl RunConfig {
    pub fn module_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn out_dir(&self) -> &Path {
        &self.paths.out
    }

    /// Checks every value, naming the offending JSON path on failure.
    pub fn validate(&self) -> Result<()> {
        let dims = &self.basis.dims;
        dims.validate().map_err(|e| CliError::config("basis.dims", e.to_string()))?;
        self.cameras
            .front
            .validate()
            .map_err(|e| CliError::config("cameras.front", e.to_string()))?;
        self.cameras
            .ego
            .validate()
            .map_err(|e| CliError::config("cameras.ego", e.to_string()))?;

        let sim = &self.simulator;
        if sim.roaming_scenarios.is_empty() {
            return Err(CliError::config("simulator.roaming_scenarios", "needs at least one recording"));
        }
        if sim.studio_sequences == 0 {
            return Err(CliError::config("simulator.studio_sequences", "must be at least 1"));
        }
        if sim.frames_per_sequence == 0 {
            return Err(CliError::config("simulator.frames_per_sequence", "must be at least 1"));
        }
        sim.export
            .validate()
            .map_err(|e| CliError::config("simulator.export", e.to_string()))?;

        self.recon
            .energy
            .validate()
            .map_err(|e| CliError::config("recon.energy", e.to_string()))?;
        if self.recon.frames == 0 {
            return Err(CliError::config("recon.frames", "must be at least 1"));
        }

        if self.ego2exp.output_dim != dims.delta {
            return Err(CliError::config(
                "ego2exp.output_dim",
                format!("must equal basis.dims.delta ({})", dims.delta),
            ));
        }
        self.ego2exp
            .validate()
            .map_err(|e| CliError::config("ego2exp", e.to_string()))?;
        self.validate_exp2vreal()?;

        let ev = &self.eval;
        if ev.reenact_frames == 0 {
            return Err(CliError::config("eval.reenact_frames", "must be at least 1"));
        }
        if ev.reenact_sequence >= sim.roaming_scenarios.len() {
            return Err(CliError::config(
                "eval.reenact_sequence",
                format!("only {} head-mounted recordings exist", sim.roaming_scenarios.len()),
            ));
        }
        if ev.bench_frames == 0 {
            return Err(CliError::config("eval.bench_frames", "must be at least 1"));
        }
        if ev.bench_repetitions == 0 {
            return Err(CliError::config("eval.bench_repetitions", "must be at least 1"));
        }
        for (i, c) in ev.bench_components.iter().enumerate() {
            check_component(c).map_err(|m| CliError::config(&format!("eval.bench_components[{i}]"), m))?;
        }
        Ok(())
    }

    fn validate_exp2vreal(&self) -> Result<()> {
        let x = &self.exp2vreal;
        let path = |f: &str| format!("exp2vreal.{f}");
        if !(x.lambda >= 0.0 && x.lambda.is_finite()) {
            return Err(CliError::config(&path("lambda"), format!("must be non-negative, got {}", x.lambda)));
        }
        if !(x.adversarial_weight >= 0.0 && x.adversarial_weight.is_finite()) {
            return Err(CliError::config(&path("adversarial_weight"), "must be non-negative"));
        }
        if !(x.learning_rate > 0.0 && x.learning_rate.is_finite()) {
            return Err(CliError::config(&path("learning_rate"), "must be positive"));
        }
        if !(0.0..1.0).contains(&x.beta1) {
            return Err(CliError::config(&path("beta1"), "must lie in [0, 1)"));
        }
        for (field, w) in [("full_window", x.full_window), ("optimized_window", x.optimized_window)] {
            if w == 0 || w % 2 == 0 {
                return Err(CliError::config(&path(field), format!("must be odd, got {w}")));
            }
        }
        for (field, v) in [
            ("batch_size", x.batch_size),
            ("channel_divisor", x.channel_divisor),
            ("discriminator_width", x.discriminator_width),
        ] {
            if v == 0 {
                return Err(CliError::config(&path(field), "must be at least 1"));
            }
        }
        if x.variants.is_empty() {
            return Err(CliError::config(&path("variants"), "needs at least one generator"));
        }
        let sel = &x.selection;
        if sel.poses == 0 || sel.hold_frames == 0 {
            return Err(CliError::config(&path("selection"), "poses and hold_frames must be at least 1"));
        }
        for (variant, field) in [(GanVariant::Full, "full_size"), (GanVariant::Optimized, "optimized_size")] {
            x.gan_config(variant)
                .validate()
                .map_err(|e| CliError::config(&path(field), e.to_string()))?;
        }
        Ok(())
    }
}

fn check_component(name: &str) -> std::result::Result<(), String> {
    if BENCH_COMPONENTS.contains(&name) {
        Ok(())
    } else {
        Err(format!("unknown component {name:?}; expected one of {}", BENCH_COMPONENTS.join(", ")))
    }
}

/// Splits and checks a comma-separated component list.
pub fn parse_components(list: &str) -> Result<Vec<String>> {
    let items: Vec<String> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if items.is_empty() {
        return Err(CliError::config("--components", "empty component list"));
    }
    for c in &items {
        check_component(c).map_err(|m| CliError::config("--components", m))?;
    }
    Ok(items)
}

/// Parses a configuration document; absent keys take their defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "(root)".to_string() } else { path };
        CliError::config(&path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::config("--config", format!("{} does not exist", path.display()))
        } else {
            io(path)(e)
        }
    })?;
    parse_config_str(&text)
}

pub fn to_json(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes") + "\n"
}
