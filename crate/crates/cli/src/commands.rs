//! The pipeline stages, each reading and writing fixed paths under the
//! output directory.

use std::fs;
use std::path::{Path, PathBuf};

use egoface_core::camera::Pose;
use egoface_core::capture::{
    export_dataset, gen_performance, load_frame, read_params, render_pair, DatasetKind, DatasetManifest, ParamRecord,
    PerformanceScript, Scenario, Split, FRONTAL_DISTANCE,
};
use egoface_core::face::{default_gamma, synth_basis, FaceBasis, ParamVector};
use egoface_core::recon::{fit_sequence, write_fits_jsonl};
use egoface_core::render::{project_landmarks, rasterize_albedo, Image};
use egoface_nets::data::{concat_channels, image_tensor};
use egoface_nets::ego2exp::{
    expression_mse, load_expression_set, mean_expression, predict_expressions, predict_set, train_regressor,
    write_regressor_curve, ExpressionRegressor, FaceMask, RegressorConfig, RegressorPreset,
};
use egoface_nets::eval::{
    eval_ego2exp_geometry, generator_reenactment_mse, geometry_errors, pervertex_distance, published_ms,
    timing_bench, BenchComponent, Stage,
};
use egoface_nets::exp2vreal::{
    albedo_input, build_generator, train_cgan, translate, translate_tensor, write_gan_curve, GanNetwork, GanVariant,
    PoseSelection, TranslationSet,
};
use serde::Serialize;

use crate::config::{seed_offset, RunConfig};
use crate::error::{io, CliError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const REGRESSOR_STEM: &str = "ego2exp";

/// Where every artifact lives under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn basis(&self) -> PathBuf {
        self.root.join("model").join("basis.json")
    }

    pub fn ego_data(&self) -> PathBuf {
        self.root.join("data").join("ego2exp")
    }

    pub fn studio_data(&self) -> PathBuf {
        self.root.join("data").join("exp2vreal")
    }

    pub fn fits(&self) -> PathBuf {
        self.root.join("fits")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn reenact(&self, variant: GanVariant) -> PathBuf {
        self.root.join("reenact").join(variant.name())
    }

    pub fn generator_stem(variant: GanVariant) -> String {
        format!("exp2vreal_{variant}")
    }

    pub fn discriminator_stem(variant: GanVariant) -> String {
        format!("exp2vreal_{variant}_disc")
    }

    pub fn generator_weights(&self, variant: GanVariant) -> PathBuf {
        self.models().join(format!("{}.egfw", Self::generator_stem(variant)))
    }

    pub fn regressor_weights(&self) -> PathBuf {
        self.models().join(format!("{REGRESSOR_STEM}.egfw"))
    }
}

fn require(path: &Path, what: &str, command: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            what: what.to_string(),
            path: path.to_path_buf(),
            command,
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    fs::write(path, text).map_err(io(path))
}

fn load_basis(layout: &Layout) -> Result<FaceBasis> {
    let path = layout.basis();
    require(&path, "face model", "synth-model")?;
    Ok(FaceBasis::load(&path)?)
}

fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<ParamRecord>)> {
    require(&dir.join("manifest.json"), "dataset", "gen-data")?;
    let manifest = DatasetManifest::load(dir)?;
    let params = read_params(dir)?;
    if params.len() != manifest.entries.len() {
        return Err(CliError::Core(egoface_core::CoreError::Format {
            path: dir.to_path_buf(),
            message: "parameter records do not match the manifest".into(),
        }));
    }
    Ok((manifest, params))
}

fn pose_of(p: &ParamVector) -> Pose {
    Pose {
        rotation: p.rotation,
        translation: p.translation,
    }
}

/// Writes the resolved configuration next to the artifacts.
pub fn write_config(cfg: &RunConfig) -> Result<()> {
    let root = cfg.out_dir();
    create_dir(root)?;
    let path = root.join(CONFIG_FILE);
    fs::write(&path, crate::config::to_json(cfg)).map_err(io(&path))
}

pub fn synth_model(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    write_config(cfg)?;
    let d = cfg.basis.dims;
    let basis = synth_basis(d.vertices, d.alpha, d.beta, d.delta, cfg.module_seed(seed_offset::BASIS))?;
    let path = layout.basis();
    create_dir(path.parent().expect("basis lives in a directory"))?;
    basis.save(&path)?;
    println!(
        "face model: {} vertices, |alpha| {}, |beta| {}, |delta| {}, {} parameters per frame -> {}",
        d.vertices,
        d.alpha,
        d.beta,
        d.delta,
        d.param_count(),
        path.display()
    );
    Ok(())
}

/// Scripts for one person: every recording shares the identity drawn from
/// the identity seed.
fn person_scripts(
    cfg: &RunConfig,
    basis: &FaceBasis,
    scenarios: &[Scenario],
    seed_base: u64,
) -> Result<Vec<PerformanceScript>> {
    let identity = gen_performance(basis, cfg.module_seed(seed_offset::IDENTITY), 1, &Scenario::studio(0))?;
    scenarios
        .iter()
        .enumerate()
        .map(|(i, scenario)| {
            let seed = cfg.module_seed(seed_base + i as u64);
            let mut script = gen_performance(basis, seed, cfg.simulator.frames_per_sequence, scenario)?;
            script.alpha = identity.alpha.clone();
            script.beta = identity.beta.clone();
            Ok(script)
        })
        .collect()
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    let basis = load_basis(&layout)?;
    let sim = &cfg.simulator;
    let roaming: Vec<Scenario> = sim.roaming_scenarios.iter().map(|&s| Scenario::roaming(s)).collect();
    let scripts = person_scripts(cfg, &basis, &roaming, seed_offset::ROAMING)?;
    let manifest = export_dataset(
        DatasetKind::Ego2Exp,
        &basis,
        &scripts,
        &cfg.cameras,
        &sim.export,
        &layout.ego_data(),
    )?;
    for s in &manifest.sequences {
        if let (Some(injected), Some(sync)) = (s.injected_offset, &s.sync) {
            println!(
                "head-mounted sequence {}: injected offset {injected}, recovered {}",
                s.index, sync.offset
            );
        }
    }
    println!(
        "{} head-mounted frames ({} held out) -> {}",
        manifest.entries.len(),
        manifest.split_indices(Split::Test).len(),
        layout.ego_data().display()
    );
    let studio = vec![Scenario::studio(sim.studio_scenario); sim.studio_sequences];
    let scripts = person_scripts(cfg, &basis, &studio, seed_offset::STUDIO)?;
    let manifest = export_dataset(
        DatasetKind::Exp2VRealFace,
        &basis,
        &scripts,
        &cfg.cameras,
        &sim.export,
        &layout.studio_data(),
    )?;
    println!(
        "{} tripod frames ({} held out) -> {}",
        manifest.entries.len(),
        manifest.split_indices(Split::Test).len(),
        layout.studio_data().display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    frames: usize,
    converged: usize,
    mean_vertex_error_mm: f64,
    max_vertex_error_mm: f64,
}

/// Fits the leading frames of the first tripod sequence from a neutral start
/// with landmarks projected from the ground truth.
pub fn fit(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    let basis = load_basis(&layout)?;
    let dir = layout.studio_data();
    let (manifest, params) = load_dataset(&dir)?;
    let picked: Vec<usize> = (0..manifest.entries.len())
        .filter(|&i| manifest.entries[i].sequence == 0)
        .take(cfg.recon.frames)
        .collect();
    let cam = manifest.rig.front;
    let mut frames = Vec::with_capacity(picked.len());
    let mut landmarks = Vec::with_capacity(picked.len());
    let noise = cfg.recon.energy.landmark_noise;
    for (k, &i) in picked.iter().enumerate() {
        frames.push(load_frame(&dir, &manifest.entries[i].front)?);
        let truth = project_landmarks(&basis, &params[i].params, &cam)?;
        landmarks.push(truth.with_noise(noise, cfg.module_seed(seed_offset::RECON).wrapping_add(k as u64)));
    }
    let mut init = ParamVector::zeros(&basis.dims);
    init.translation = [0.0, 0.0, FRONTAL_DISTANCE];
    init.gamma = default_gamma();
    let fits = fit_sequence(&basis, &frames, &landmarks, &cam, &init, &cfg.recon.energy)?;
    create_dir(&layout.fits())?;
    write_fits_jsonl(&layout.fits().join("fits.jsonl"), &fits)?;

    let mut csv = String::from("frame,converged,final_energy,vertex_error_mm\n");
    let mut errors = Vec::with_capacity(fits.len());
    for (f, &i) in fits.iter().zip(&picked) {
        if !f.params.is_finite() || !f.final_energy.is_finite() {
            return Err(CliError::Numeric(format!("fit of frame {} is not finite", f.frame)));
        }
        let truth = &params[i].params;
        let a = basis.assemble_geometry(&truth.alpha, &truth.delta)?;
        let b = basis.assemble_geometry(&f.params.alpha, &f.params.delta)?;
        let e = pervertex_distance(&a, &b)?.mean;
        csv.push_str(&format!("{},{},{:.9e},{:.6}\n", f.frame, f.converged, f.final_energy, e));
        errors.push(e);
    }
    create_dir(&layout.reports())?;
    let path = layout.reports().join("fit_errors.csv");
    fs::write(&path, csv).map_err(io(&path))?;
    let summary = FitSummary {
        frames: fits.len(),
        converged: fits.iter().filter(|f| f.converged).count(),
        mean_vertex_error_mm: errors.iter().sum::<f64>() / errors.len() as f64,
        max_vertex_error_mm: errors.iter().cloned().fold(0.0, f64::max),
    };
    write_json(&layout.reports().join("fit_summary.json"), &summary)?;
    println!(
        "fitted {} frames ({} converged): mean vertex error {:.3} mm",
        summary.frames, summary.converged, summary.mean_vertex_error_mm
    );
    Ok(())
}

pub fn train_ego2exp(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    let basis = load_basis(&layout)?;
    let dir = layout.ego_data();
    let (manifest, params) = load_dataset(&dir)?;
    let rc = &cfg.ego2exp;
    let mask = FaceMask::for_frame(&basis, &params[0].params, &manifest.rig.ego, rc.input_size)?;
    let train = load_expression_set(&dir, &manifest, Split::Train, &mask)?;
    let test = load_expression_set(&dir, &manifest, Split::Test, &mask)?;
    println!(
        "training the {} regressor on {} frames ({} held out), {} epochs",
        rc.preset,
        train.len(),
        test.len(),
        rc.epochs
    );
    let model = ExpressionRegressor::new(
        rc.clone(),
        basis.sigma_delta.clone(),
        mask,
        cfg.module_seed(seed_offset::REGRESSOR_INIT),
    )?;
    let (model, curve) = train_regressor(&train, &test, model, cfg.module_seed(seed_offset::REGRESSOR_ORDER))?;
    model.save(&layout.models(), REGRESSOR_STEM)?;
    create_dir(&layout.reports())?;
    write_regressor_curve(&layout.reports().join("ego2exp_curve.csv"), &curve)?;
    if let Some(last) = curve.last() {
        println!(
            "epoch {}: train mse {:.5}, held-out mse {:.5} (prior-sigma units)",
            last.epoch, last.train_mse, last.val_mse
        );
    }
    Ok(())
}

pub fn train_exp2vreal(cfg: &RunConfig, variants: &[GanVariant]) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    let dir = layout.studio_data();
    let (manifest, _) = load_dataset(&dir)?;
    create_dir(&layout.reports())?;
    for &variant in variants {
        let gan = cfg.exp2vreal.gan_config(variant);
        let set = TranslationSet::load(&dir, &manifest, gan.image_size)?;
        println!(
            "training the {variant} translator at {px}x{px}, window {}, on {} frames, {} epochs",
            gan.temporal_window,
            set.indices(Split::Train).len(),
            gan.epochs,
            px = gan.image_size
        );
        let (g, d, curve) = train_cgan(&set, &gan, cfg.module_seed(seed_offset::TRANSLATOR))?;
        g.save(&layout.models(), &Layout::generator_stem(variant))?;
        d.save(&layout.models(), &Layout::discriminator_stem(variant))?;
        write_gan_curve(&layout.reports().join(format!("exp2vreal_{variant}_curve.csv")), &curve)?;
        if let Some(last) = curve.last() {
            println!(
                "epoch {}: l1 {:.5}, generator adversarial {:.4}, discriminator {:.4}",
                last.epoch, last.l1, last.g_adv, last.d_loss
            );
        }
    }
    Ok(())
}

/// Entries of a window centred on position `k` of `frames`, stepping only
/// across consecutive frame numbers and clamping elsewhere.
fn window_positions(frames: &[usize], k: usize, window: usize) -> Vec<usize> {
    let half = window / 2;
    let mut out = Vec::with_capacity(window);
    let walk = |dir: isize, steps: usize| -> usize {
        let mut pos = k;
        for _ in 0..steps {
            let next = pos as isize + dir;
            if next < 0 || next as usize >= frames.len() {
                break;
            }
            let next = next as usize;
            if frames[next] as isize - frames[pos] as isize != dir {
                break;
            }
            pos = next;
        }
        pos
    };
    for d in (1..=half).rev() {
        out.push(walk(-1, d));
    }
    out.push(k);
    for d in 1..=half {
        out.push(walk(1, d));
    }
    out
}

#[derive(Serialize)]
struct ReenactedFrame {
    entry: usize,
    sequence: usize,
    frame: usize,
    pose_index: usize,
    delta: Vec<f64>,
}

/// Test-time path: head-mounted frame, estimated expression, albedo render
/// under the selected pose, translated frontal frame.
pub fn reenact(cfg: &RunConfig, variant: GanVariant) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    let g_path = layout.generator_weights(variant);
    require(&g_path, &format!("{variant} generator weights"), "train-exp2vreal")?;
    require(&layout.regressor_weights(), "expression regressor weights", "train-ego2exp")?;
    let basis = load_basis(&layout)?;
    let generator = GanNetwork::load(&layout.models(), &Layout::generator_stem(variant))?;
    let regressor = ExpressionRegressor::load(&layout.models(), REGRESSOR_STEM)?;
    let ego_dir = layout.ego_data();
    let (ego, _) = load_dataset(&ego_dir)?;
    let (studio, studio_params) = load_dataset(&layout.studio_data())?;

    let person = &studio_params[0].params;
    let source: Vec<ParamVector> = studio_params
        .iter()
        .filter(|r| r.sequence == 0)
        .map(|r| r.params.clone())
        .collect();
    let sel = &cfg.exp2vreal.selection;
    let mut selection = PoseSelection::from_sequence(&source, sel.poses, sel.mode, sel.ping_pong)?;
    selection.hold_frames = sel.hold_frames;
    selection.validate()?;
    let background = studio.sequences[0].scenario.background;
    let size = generator.config.image_size;

    let entries: Vec<usize> = ego
        .split_indices(Split::Test)
        .into_iter()
        .filter(|&i| ego.entries[i].sequence == cfg.eval.reenact_sequence)
        .take(cfg.eval.reenact_frames)
        .collect();
    if entries.is_empty() {
        return Err(CliError::config("eval.reenact_sequence", "no held-out frames in that recording"));
    }
    let out = layout.reenact(variant);
    let (frame_dir, albedo_dir) = (out.join("frames"), out.join("albedo"));
    create_dir(&frame_dir)?;
    create_dir(&albedo_dir)?;

    let mut albedo = Vec::with_capacity(entries.len());
    let mut log = String::new();
    for (k, &i) in entries.iter().enumerate() {
        let e = &ego.entries[i];
        let rel = e.ego.as_ref().ok_or_else(|| CliError::Missing {
            what: "head-mounted frame".into(),
            path: ego_dir.clone(),
            command: "gen-data",
        })?;
        let delta = predict_expressions(&regressor, &load_frame(&ego_dir, rel)?)?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Numeric(format!("expression estimate for entry {i} is not finite")));
        }
        let pose = selection.poses[selection.pose_index(k)];
        let params = ParamVector {
            rotation: pose.rotation,
            translation: pose.translation,
            delta: delta.clone(),
            ..person.clone()
        };
        let img = albedo_input(&basis, &params, &studio.rig.front, &pose, background, size)?;
        img.write_ppm(&albedo_dir.join(format!("{k:06}.ppm")))?;
        albedo.push(img);
        let record = ReenactedFrame {
            entry: i,
            sequence: e.sequence,
            frame: e.frame,
            pose_index: selection.pose_index(k),
            delta,
        };
        log.push_str(&serde_json::to_string(&record).expect("record serializes"));
        log.push('\n');
    }
    let frame_numbers: Vec<usize> = entries.iter().map(|&i| ego.entries[i].frame).collect();
    for k in 0..entries.len() {
        let window: Vec<Image> = window_positions(&frame_numbers, k, generator.config.temporal_window)
            .into_iter()
            .map(|p| albedo[p].clone())
            .collect();
        let frame = translate(&generator, &window)?;
        frame.write_ppm(&frame_dir.join(format!("{k:06}.ppm")))?;
    }
    let path = out.join("expressions.jsonl");
    fs::write(&path, log).map_err(io(&path))?;
    println!(
        "reenacted {} held-out frames with the {variant} translator -> {}",
        entries.len(),
        frame_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Ego2ExpEval {
    test_frames: usize,
    regressor_mse: f64,
    mean_predictor_mse: f64,
    regressor_geometry_mm: f64,
    mean_predictor_geometry_mm: f64,
    frames_beating_mean: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn eval_geo(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    require(&layout.regressor_weights(), "expression regressor weights", "train-ego2exp")?;
    let basis = load_basis(&layout)?;
    let regressor = ExpressionRegressor::load(&layout.models(), REGRESSOR_STEM)?;
    let dir = layout.ego_data();
    let (manifest, params) = load_dataset(&dir)?;
    let test = load_expression_set(&dir, &manifest, Split::Test, &regressor.mask)?;
    let train_targets: Vec<Vec<f64>> = manifest
        .split_indices(Split::Train)
        .into_iter()
        .map(|i| params[i].params.delta.clone())
        .collect();
    let mean = mean_expression(&train_targets);
    let baseline = vec![mean.clone(); test.len()];
    let alpha = &params[0].params.alpha;

    let predictions = predict_set(&regressor, &test)?;
    let stats = eval_ego2exp_geometry(&basis, alpha, &regressor, &test)?;
    let base_stats = geometry_errors(&basis, alpha, &test.targets, &baseline)?;
    let beating = predictions
        .iter()
        .zip(&test.targets)
        .filter(|(p, t)| distance(p, t) < distance(&mean, t))
        .count();
    let report = Ego2ExpEval {
        test_frames: test.len(),
        regressor_mse: expression_mse(&predictions, &test.targets, &regressor.scale),
        mean_predictor_mse: expression_mse(&baseline, &test.targets, &regressor.scale),
        regressor_geometry_mm: stats.average.mean,
        mean_predictor_geometry_mm: base_stats.average.mean,
        frames_beating_mean: beating as f64 / test.len().max(1) as f64,
    };
    let reports = layout.reports();
    create_dir(&reports)?;
    stats.write_json(&reports.join("geo_error.json"))?;
    stats.write_csv(&reports.join("geo_error.csv"))?;
    base_stats.write_json(&reports.join("geo_error_mean_predictor.json"))?;
    base_stats.write_csv(&reports.join("geo_error_mean_predictor.csv"))?;
    write_json(&reports.join("ego2exp_eval.json"), &report)?;
    println!("per-vertex geometry error on {} held-out frames", test.len());
    println!("regressor\n{}", stats.table());
    println!("mean expression\n{}", base_stats.table());
    println!(
        "expression mse {:.5} vs mean {:.5}; closer than the mean on {:.1}% of frames",
        report.regressor_mse,
        report.mean_predictor_mse,
        100.0 * report.frames_beating_mean
    );
    Ok(())
}

#[derive(Serialize)]
struct VariantError {
    variant: GanVariant,
    size: usize,
    mean_mse: f64,
    common_size: usize,
    common_mean_mse: f64,
}

#[derive(Serialize)]
struct ReenactmentSummary {
    test_frames: usize,
    variants: Vec<VariantError>,
    /// Larger over smaller common-size mean error when two variants exist.
    ratio: Option<f64>,
}

pub fn eval_mse(cfg: &RunConfig, variants: &[GanVariant]) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    for &v in variants {
        require(&layout.generator_weights(v), &format!("{v} generator weights"), "train-exp2vreal")?;
    }
    let dir = layout.studio_data();
    let (manifest, _) = load_dataset(&dir)?;
    let generators = variants
        .iter()
        .map(|&v| GanNetwork::load(&layout.models(), &Layout::generator_stem(v)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let common = generators.iter().map(|g| g.config.image_size).min().expect("at least one variant");
    let reports = layout.reports();
    create_dir(&reports)?;
    let mut summary = ReenactmentSummary {
        test_frames: 0,
        variants: Vec::new(),
        ratio: None,
    };
    for g in &generators {
        let set = TranslationSet::load(&dir, &manifest, g.config.image_size)?;
        let entries = set.indices(Split::Test);
        let native = generator_reenactment_mse(g, &set, &entries, g.config.image_size)?;
        let shared = generator_reenactment_mse(g, &set, &entries, common)?;
        native.write_csv(&reports.join(format!("reenactment_{}.csv", g.config.variant)))?;
        if !native.mean.is_finite() {
            return Err(CliError::Numeric(format!("{} reenactment error is not finite", g.config.variant)));
        }
        summary.test_frames = entries.len();
        summary.variants.push(VariantError {
            variant: g.config.variant,
            size: g.config.image_size,
            mean_mse: native.mean,
            common_size: common,
            common_mean_mse: shared.mean,
        });
    }
    if summary.variants.len() > 1 {
        let m: Vec<f64> = summary.variants.iter().map(|v| v.common_mean_mse).collect();
        let (lo, hi) = m.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        summary.ratio = Some(hi / lo);
    }
    write_json(&reports.join("reenactment.json"), &summary)?;
    println!("self-reenactment error on {} held-out frames", summary.test_frames);
    println!("{:<10} {:>6} {:>12} {:>8} {:>12}", "variant", "size", "mse", "common", "mse");
    for v in &summary.variants {
        println!(
            "{:<10} {:>6} {:>12.6} {:>8} {:>12.6}",
            v.variant.name(),
            v.size,
            v.mean_mse,
            v.common_size,
            v.common_mean_mse
        );
    }
    Ok(())
}

/// Distinct inputs cycled through by the timing run.
const BENCH_INPUTS: usize = 25;

pub fn bench(cfg: &RunConfig, components: &[String]) -> Result<()> {
    let layout = Layout::new(cfg.out_dir());
    let basis = if layout.basis().exists() {
        load_basis(&layout)?
    } else {
        let d = cfg.basis.dims;
        synth_basis(d.vertices, d.alpha, d.beta, d.delta, cfg.module_seed(seed_offset::BASIS))?
    };
    let seed = cfg.module_seed(seed_offset::BENCH);
    let count = BENCH_INPUTS.min(cfg.eval.bench_frames);
    let scenario = Scenario::studio(cfg.simulator.studio_scenario);
    let script = gen_performance(&basis, seed, count, &scenario)?;
    let mut ego = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    for f in 0..count {
        let pair = render_pair(&basis, &script, f, &cfg.cameras)?;
        ego.push(pair.ego);
        params.push(pair.params);
    }
    let front = cfg.cameras.front;
    let background = scenario.background;

    let mut regressors = Vec::new();
    let mut generators = Vec::new();
    let mut inputs = Vec::new();
    for name in components {
        if let Ok(preset) = name.parse::<RegressorPreset>() {
            let trained = layout.regressor_weights().exists()
                .then(|| ExpressionRegressor::load(&layout.models(), REGRESSOR_STEM))
                .transpose()?
                .filter(|r| r.config.preset == preset);
            let model = match trained {
                Some(m) => m,
                None => {
                    let rc = RegressorConfig {
                        preset,
                        ..RegressorConfig::preset(preset, basis.dims.delta)
                    };
                    let rc = RegressorConfig {
                        input_size: cfg.ego2exp.input_size,
                        ..rc
                    };
                    let mask = FaceMask::for_frame(&basis, &params[0], &cfg.cameras.ego, rc.input_size)?;
                    ExpressionRegressor::new(rc, basis.sigma_delta.clone(), mask, seed)?
                }
            };
            regressors.push((name.clone(), model));
        } else if let Ok(variant) = name.parse::<GanVariant>() {
            let g = if layout.generator_weights(variant).exists() {
                GanNetwork::load(&layout.models(), &Layout::generator_stem(variant))?
            } else {
                build_generator(&cfg.exp2vreal.gan_config(variant), seed)?
            };
            let frames: Vec<_> = params
                .iter()
                .map(|p| albedo_input(&basis, p, &front, &pose_of(p), background, g.config.image_size))
                .collect::<std::result::Result<_, _>>()?;
            let tensors: Vec<_> = frames.iter().map(image_tensor).collect();
            let w = g.config.temporal_window;
            let windows = (0..count)
                .map(|k| {
                    let parts: Vec<_> = (0..w)
                        .map(|j| &tensors[(k + j + count - w / 2) % count])
                        .collect();
                    concat_channels(&parts)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            inputs.push(windows);
            generators.push((name.clone(), g));
        }
    }

    let mut bench_components: Vec<BenchComponent> = Vec::new();
    for name in components {
        if let Some((_, r)) = regressors.iter().find(|(n, _)| n == name) {
            let ego = &ego;
            bench_components.push(BenchComponent {
                stage: Stage::Ego2Exp,
                name: name.clone(),
                reference_ms: published_ms(name),
                run: Box::new(move |f| predict_expressions(r, &ego[f % count]).map(drop)),
            });
        } else if name == "albedo" {
            let (basis, params) = (&basis, &params);
            bench_components.push(BenchComponent {
                stage: Stage::Rendering,
                name: name.clone(),
                reference_ms: published_ms(name),
                run: Box::new(move |f| {
                    let p = &params[f % count];
                    let img = rasterize_albedo(basis, p, &front, &pose_of(p), background)?;
                    drop(img.to_rgb8());
                    Ok(())
                }),
            });
        } else if let Some(k) = generators.iter().position(|(n, _)| n == name) {
            let (g, windows) = (&generators[k].1, &inputs[k]);
            bench_components.push(BenchComponent {
                stage: Stage::Exp2VRealFace,
                name: name.clone(),
                reference_ms: published_ms(name),
                run: Box::new(move |f| translate_tensor(g, &windows[f % count]).map(drop)),
            });
        }
    }
    // Table order: regressors, rendering, translators.
    bench_components.sort_by_key(|c| c.stage as u8);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single worker pool");
    let report = single.install(|| timing_bench(&bench_components, cfg.eval.bench_frames, cfg.eval.bench_repetitions))?;
    let reports = layout.reports();
    create_dir(&reports)?;
    report.write_csv(&reports.join("timing.csv"))?;
    write_json(&reports.join("timing.json"), &report)?;
    println!(
        "per-frame timings over {} frames, {} passes",
        report.frames, report.repetitions
    );
    print!("{}", report.table());
    Ok(())
}

pub fn demo(cfg: &RunConfig) -> Result<()> {
    println!("[1/9] synth-model");
    synth_model(cfg)?;
    println!("[2/9] gen-data");
    gen_data(cfg)?;
    println!("[3/9] fit");
    fit(cfg)?;
    println!("[4/9] train-ego2exp");
    train_ego2exp(cfg)?;
    println!("[5/9] train-exp2vreal");
    train_exp2vreal(cfg, &cfg.exp2vreal.variants)?;
    println!("[6/9] reenact");
    reenact(cfg, cfg.exp2vreal.reenact_variant)?;
    println!("[7/9] eval-geo");
    eval_geo(cfg)?;
    println!("[8/9] eval-mse");
    eval_mse(cfg, &cfg.exp2vreal.variants)?;
    println!("[9/9] bench");
    bench(cfg, &cfg.eval.bench_components)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::window_positions;

    #[test]
    fn windows_stop_at_gaps() {
        let frames = [10, 11, 12, 40, 41];
        assert_eq!(window_positions(&frames, 0, 3), vec![0, 0, 1]);
        assert_eq!(window_positions(&frames, 2, 3), vec![1, 2, 2]);
        assert_eq!(window_positions(&frames, 3, 5), vec![3, 3, 3, 4, 4]);
        assert_eq!(window_positions(&frames, 1, 1), vec![1]);
    }
}
