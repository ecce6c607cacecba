//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use egoface_core::camera::{PerspectiveCamera, Pose};
use egoface_core::capture::{align_streams, inject_sync_events, FrameStream, StreamSource, SYNC_PATCH};
use egoface_core::face::{default_gamma, shade_vertices, synth_basis, FaceBasis, ModelDims, ParamVector};
use egoface_core::recon::{
    energy_jacobian_on, energy_residuals_on, fit_frame, photo_vertices, EnergyConfig, FreeSet,
};
use egoface_core::render::{project_landmarks, rasterize_shaded, Image, LandmarkSet, Rgb8Image};
use egoface_nets::eval::Stage;
use egoface_nets::exp2vreal::{
    architecture_table, build_discriminator, build_generator, generator_loss, generator_spec, loss_adv, loss_l1,
    GanConfig, GanVariant,
};
use egoface_nn::loss::mse;
use egoface_nn::{build_network, gradient_check, Layer, Mode, NetworkSpec, NetworkState, Tensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn within(started: Instant, budget: Duration, what: &str) -> std::result::Result<Duration, String> {
    let took = started.elapsed();
    ensure!(took < budget, "{what} took {took:.1?}, budget {budget:?}");
    Ok(took)
}

fn desk_basis() -> FaceBasis {
    synth_basis(500, 16, 16, 12, 3).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn model_dimensionality() -> Outcome {
    let t = Instant::now();
    let dims = ModelDims::paper();
    let p = ParamVector::zeros(&dims);
    let parts = [
        p.rotation.len(),
        p.translation.len(),
        p.alpha.len(),
        p.beta.len(),
        p.delta.len(),
        p.gamma.len(),
    ];
    ensure!(parts == [3, 3, 128, 128, 64, 27], "breakdown {parts:?}");
    ensure!(p.len() == 353 && p.to_flat().len() == 353, "length {}", p.len());
    ensure!(dims.param_count() == 353, "param_count {}", dims.param_count());
    let took = within(t, Duration::from_secs(1), "dimension check")?;
    Ok(format!("353 = 3+3+128+128+64+27 ({took:.1?})"))
}

fn linearity() -> Outcome {
    let t = Instant::now();
    let b = desk_basis();
    let mesh = b.mesh(&ParamVector::zeros(&b.dims)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| 2.0 * normal(rng)).collect() };
    let add = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, c)| a + c).collect() };
    let (na, nb, nd) = (b.dims.alpha, b.dims.beta, b.dims.delta);
    for k in 0..1000 {
        let (a1, a2, d1, d2) = (draw(na, &mut rng), draw(na, &mut rng), draw(nd, &mut rng), draw(nd, &mut rng));
        let both = b.assemble_geometry(&add(&a1, &a2), &add(&d1, &d2)).unwrap();
        let first = b.assemble_geometry(&a1, &d1).unwrap();
        let second = b.assemble_geometry(&a2, &d2).unwrap();
        for i in 0..both.len() {
            ensure!(
                close(both[i] - first[i], second[i] - b.mean_geometry[i]),
                "geometry draw {k}, coordinate {i}"
            );
        }
        let (b1, b2) = (draw(nb, &mut rng), draw(nb, &mut rng));
        let both = b.assemble_reflectance(&add(&b1, &b2)).unwrap();
        let first = b.assemble_reflectance(&b1).unwrap();
        let second = b.assemble_reflectance(&b2).unwrap();
        for i in 0..both.len() {
            ensure!(
                close(both[i] - first[i], second[i] - b.mean_reflectance[i]),
                "reflectance draw {k}, entry {i}"
            );
        }
        let (g1, g2) = (draw(27, &mut rng), draw(27, &mut rng));
        let (s, u) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mixed: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| s * x + u * y).collect();
        let c1 = shade_vertices(&mesh.reflectance, &mesh.normals, &g1).unwrap();
        let c2 = shade_vertices(&mesh.reflectance, &mesh.normals, &g2).unwrap();
        let cm = shade_vertices(&mesh.reflectance, &mesh.normals, &mixed).unwrap();
        for i in 0..cm.len() {
            ensure!(close(cm[i], s * c1[i] + u * c2[i]), "lighting draw {k}, channel {i}");
        }
    }
    let took = within(t, Duration::from_secs(5), "linearity suite")?;
    Ok(format!("1000 draws, geometry/reflectance affine and shading linear in lighting ({took:.1?})"))
}

fn conv(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Layer {
    Layer::Conv {
        in_channels: cin,
        out_channels: cout,
        kernel,
        stride,
        padding,
        bias,
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Image-like values in [0, 1].
fn unit_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let t = random_tensor(shape, seed);
    Tensor::new(shape.to_vec(), t.data().iter().map(|v| 0.5 + 0.5 * v).collect()).unwrap()
}

/// One small network per layer kind, each closed by a dense head.
fn layer_networks() -> Vec<(&'static str, NetworkSpec, Mode)> {
    let img = vec![2, 5, 4];
    let headed = |input: Vec<usize>, mut layers: Vec<Layer>| {
        let body = NetworkSpec::new(input.clone(), layers.clone()).unwrap();
        let width: usize = body.output_shape.iter().product();
        if body.output_shape.len() > 1 {
            layers.push(Layer::Flatten);
        }
        layers.push(Layer::Dense { inputs: width, outputs: 3 });
        NetworkSpec::new(input, layers).unwrap()
    };
    let act = |l: Layer| headed(vec![40], vec![Layer::Dense { inputs: 40, outputs: 5 }, l]);
    vec![
        ("Conv", headed(img.clone(), vec![conv(2, 3, 3, 2, 1, true)]), Mode::Inference),
        (
            "ConvTranspose",
            headed(
                img.clone(),
                vec![Layer::ConvTranspose {
                    in_channels: 2,
                    out_channels: 2,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                    bias: true,
                }],
            ),
            Mode::Inference,
        ),
        ("Dense", headed(vec![40], vec![Layer::Dense { inputs: 40, outputs: 4 }]), Mode::Inference),
        ("LeakyRelu", act(Layer::LeakyRelu { slope: 0.2 }), Mode::Inference),
        ("Relu", act(Layer::Relu), Mode::Inference),
        ("Tanh", act(Layer::Tanh), Mode::Inference),
        ("Sigmoid", act(Layer::Sigmoid), Mode::Inference),
        ("Affine", act(Layer::Affine { scale: 0.5, shift: 0.5 }), Mode::Inference),
        ("Dropout", act(Layer::Dropout { rate: 0.5 }), Mode::Train { seed: 4 }),
        (
            "InstanceNorm",
            headed(img.clone(), vec![conv(2, 2, 3, 1, 1, false), Layer::InstanceNorm { channels: 2 }]),
            Mode::Inference,
        ),
        (
            "Concat",
            headed(
                img,
                vec![conv(2, 2, 3, 1, 1, true), Layer::Tanh, conv(2, 2, 3, 1, 1, true), Layer::Concat { source: 0 }],
            ),
            Mode::Inference,
        ),
    ]
}

const RECON_BACKGROUND: [f64; 3] = [0.1, 0.15, 0.2];

fn render(b: &FaceBasis, p: &ParamVector, cam: &PerspectiveCamera) -> (Image, LandmarkSet) {
    let mesh = b.shaded_mesh(p).unwrap();
    let pose = Pose {
        rotation: p.rotation,
        translation: p.translation,
    };
    let img = rasterize_shaded(&mesh, cam, &pose, RECON_BACKGROUND).image;
    (img, project_landmarks(b, p, cam).unwrap())
}

fn random_truth(b: &FaceBasis, rng: &mut ChaCha8Rng) -> ParamVector {
    let mut p = ParamVector::zeros(&b.dims);
    p.rotation = [0.05, -0.08, 0.02].map(|s| s * normal(rng));
    p.translation = [5.0 * normal(rng), 5.0 * normal(rng), 600.0 + 10.0 * normal(rng)];
    p.alpha = b.sigma_alpha.iter().map(|s| 0.5 * s * normal(rng)).collect();
    p.beta = b.sigma_beta.iter().map(|s| 0.5 * s * normal(rng)).collect();
    p.delta = b.sigma_delta.iter().map(|s| 0.5 * s * normal(rng)).collect();
    p.gamma = default_gamma().iter().map(|g| g * (1.0 + 0.1 * normal(rng))).collect();
    p
}

/// Central differences of the stacked residuals over every parameter.
fn numeric_jacobian(
    b: &FaceBasis,
    p: &ParamVector,
    cam: &PerspectiveCamera,
    img: &Image,
    lmk: &LandmarkSet,
    verts: &[usize],
) -> DMatrix<f64> {
    let cfg = EnergyConfig::default();
    let d = b.dims;
    let steps: Vec<f64> = [(3, 1e-6), (3, 1e-4), (d.alpha, 1e-4), (d.beta, 1e-6), (d.delta, 1e-4), (27, 1e-6)]
        .iter()
        .flat_map(|&(n, h)| std::iter::repeat_n(h, n))
        .collect();
    let flat = p.to_flat();
    let eval = |f: &[f64]| {
        let q = ParamVector::from_flat(&d, f).unwrap();
        energy_residuals_on(b, &q, cam, img, lmk, &cfg, verts).unwrap().stacked()
    };
    let rows = eval(&flat).len();
    let mut out = DMatrix::zeros(rows, flat.len());
    for (c, &h) in steps.iter().enumerate() {
        let (mut hi, mut lo) = (flat.clone(), flat.clone());
        hi[c] += h;
        lo[c] -= h;
        let (rh, rl) = (eval(&hi), eval(&lo));
        for r in 0..rows {
            out[(r, c)] = (rh[r] - rl[r]) / (2.0 * h);
        }
    }
    out
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for (i, (name, spec, mode)) in layer_networks().into_iter().enumerate() {
        let seed = 30 + i as u64;
        let state: NetworkState<f64> = build_network(&spec, seed).unwrap();
        let input = random_tensor(&spec.input_shape, seed + 100);
        let target = random_tensor(&spec.output_shape, seed + 200);
        let loss = |out: &Tensor<f64>| mse(out, &target);
        let report = gradient_check(&spec, &state, &input, mode, &loss, 12, seed).map_err(|e| e.to_string())?;
        ensure!(report.max_relative_error < 1e-4, "{name}: relative error {}", report.max_relative_error);
        worst = worst.max(report.max_relative_error);
    }

    let cfg = GanConfig {
        image_size: 16,
        temporal_window: 3,
        channel_divisor: 64,
        discriminator_width: 2,
        ..GanConfig::desk(GanVariant::Optimized)
    };
    let g = build_generator(&cfg, 5).unwrap();
    let d = build_discriminator(&cfg, 6).unwrap();
    let (g_state, d_state) = (g.state.cast::<f64>(), d.state.cast::<f64>());
    let window = unit_tensor(&[9, 16, 16], 7);
    let truth = unit_tensor(&[3, 16, 16], 8);
    let loss = |fake: &Tensor<f64>| {
        let (l, grad) = generator_loss(&d.spec, &d_state, &window, fake, &truth, cfg.lambda, cfg.adversarial_weight)?;
        Ok((l.total, grad))
    };
    let report = gradient_check(&g.spec, &g_state, &window, Mode::Inference, &loss, 6, 9).map_err(|e| e.to_string())?;
    ensure!(report.max_relative_error < 1e-4, "generator loss: relative error {}", report.max_relative_error);
    let composite = report.max_relative_error;

    let b = desk_basis();
    let cam = PerspectiveCamera::frontal_default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = random_truth(&b, &mut rng);
    let (img, lmk) = render(&b, &truth, &cam);
    let mut p = truth.clone();
    p.delta[0] += 0.2 * b.sigma_delta[0];
    p.translation[0] += 1.0;
    let verts = photo_vertices(&b, &p, &cam).unwrap();
    let (_, jac) =
        energy_jacobian_on(&b, &p, &cam, &img, &lmk, &EnergyConfig::default(), &FreeSet::all(), &verts).unwrap();
    let num = numeric_jacobian(&b, &p, &cam, &img, &lmk, &verts);
    let mut energy_worst = 0.0f64;
    for c in 0..jac.ncols() {
        let err = (jac.column(c) - num.column(c)).norm() / num.column(c).norm().max(1e-12);
        ensure!(err < 1e-3, "energy column {c}: relative error {err}");
        energy_worst = energy_worst.max(err);
    }
    let took = within(t, Duration::from_secs(120), "gradient checks")?;
    Ok(format!(
        "layers {worst:.1e}, generator loss {composite:.1e}, energy {energy_worst:.1e} over {} interior vertices ({took:.1?})",
        verts.len()
    ))
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn reconstruction_round_trip() -> Outcome {
    let t = Instant::now();
    let b = desk_basis();
    let cam = PerspectiveCamera::frontal_default();
    let cfg = EnergyConfig::default();
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let truth = random_truth(&b, &mut rng);
        let (img, lmk) = render(&b, &truth, &cam);
        let mut init = truth.clone();
        for (d, s) in init.delta.iter_mut().zip(&b.sigma_delta) {
            *d += 0.5 * s * sign(&mut rng);
        }
        for r in &mut init.rotation {
            *r += 2f64.to_radians() * sign(&mut rng);
        }
        for x in &mut init.translation {
            *x += 5.0 * sign(&mut rng);
        }
        for g in &mut init.gamma {
            *g *= 1.0 + 0.1 * sign(&mut rng);
        }
        let report = fit_frame(&b, &img, &lmk, &cam, &init, &FreeSet::tracking(), &cfg).map_err(|e| e.to_string())?;
        for w in report.energies.windows(2) {
            if w[0].level == w[1].level {
                ensure!(w[1].total <= w[0].total, "trial {trial}: accepted step raised the energy");
            }
        }
        let a = b.assemble_geometry(&truth.alpha, &truth.delta).unwrap();
        let c = b.assemble_geometry(&truth.alpha, &report.params.delta).unwrap();
        let err = a
            .chunks_exact(3)
            .zip(c.chunks_exact(3))
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
            .sum::<f64>()
            / b.vertex_count() as f64;
        ensure!(err < 0.5, "trial {trial}: mean vertex error {err:.3} mm");
        worst = worst.max(err);
    }
    let took = within(t, Duration::from_secs(300), "reconstruction trials")?;
    Ok(format!("20/20 trials, worst mean vertex error {worst:.4} mm ({took:.1?})"))
}

fn dark_stream(source: StreamSource, n: usize) -> FrameStream {
    let frame = Rgb8Image {
        width: 16,
        height: 16,
        data: vec![30; 16 * 16 * 3],
    };
    FrameStream::new(source, 25.0, 0.0, vec![frame; n]).unwrap()
}

fn sync_protocol() -> Outcome {
    let t = Instant::now();
    let front = inject_sync_events(dark_stream(StreamSource::Front, 820), 10.0, 2, 0).unwrap();
    for offset in -50i64..=50 {
        let ego = inject_sync_events(dark_stream(StreamSource::Ego, 820), 10.0, 2, offset).unwrap();
        let report = align_streams(&ego, &front).map_err(|e| e.to_string())?;
        ensure!(report.offset == offset, "injected {offset}, recovered {}", report.offset);
        ensure!(report.verified, "offset {offset} not verified");
    }
    // Events arrive 3, then 4, then 5 frames late.
    let mut frames = dark_stream(StreamSource::Ego, 800).into_frames();
    for (j, f) in frames.iter_mut().enumerate() {
        let lit = [253, 254, 504, 505, 755, 756].contains(&j);
        f.fill_rect(0, 0, SYNC_PATCH, SYNC_PATCH, [if lit { 255 } else { 0 }; 3]);
    }
    let ego = FrameStream::new(StreamSource::Ego, 25.0, 0.0, frames).unwrap();
    let report = align_streams(&ego, &front).map_err(|e| e.to_string())?;
    ensure!(!report.verified && report.ensure_verified().is_err(), "drifting stream passed verification");
    let took = within(t, Duration::from_secs(60), "sync protocol")?;
    Ok(format!("101/101 offsets in [-50, 50] exact, drift flagged ({took:.1?})"))
}

fn architecture_conformance() -> Outcome {
    let published = [
        ("Encoder1", 128, 64),
        ("Encoder2", 64, 128),
        ("Encoder3", 32, 256),
        ("Encoder4", 16, 512),
        ("Encoder5", 8, 512),
        ("Encoder6", 4, 512),
        ("Encoder7", 2, 512),
        ("Decoder7", 2, 512),
        ("Decoder6", 4, 512),
        ("Decoder5", 8, 512),
        ("Decoder4", 16, 512),
        ("Decoder3", 32, 256),
        ("Decoder2", 64, 128),
        ("Decoder1", 128, 64),
    ];
    let gray = ["Encoder1", "Encoder6", "Encoder7", "Decoder7", "Decoder6", "Decoder1"];
    let table = |cfg: &GanConfig| -> Vec<(String, usize, usize)> {
        let (spec, rows) = generator_spec(cfg).unwrap();
        architecture_table(&spec, &rows)
            .unwrap()
            .into_iter()
            .map(|r| (r.name, r.size, r.channels))
            .collect()
    };
    let expected: Vec<(String, usize, usize)> =
        published.iter().map(|&(n, s, c)| (n.to_string(), s, c)).collect();
    let full = table(&GanConfig::paper(GanVariant::Full));
    ensure!(full == expected, "full generator rows {full:?}");
    let optimized = table(&GanConfig::paper(GanVariant::Optimized));
    let kept: Vec<(String, usize, usize)> =
        expected.iter().filter(|r| !gray.contains(&r.0.as_str())).cloned().collect();
    ensure!(optimized == kept, "optimized generator rows {optimized:?}");

    let cfg = GanConfig::desk(GanVariant::Full);
    ensure!(cfg.lambda == 10.0, "lambda {}", cfg.lambda);
    let cfg = GanConfig {
        image_size: 32,
        channel_divisor: 32,
        ..GanConfig::desk(GanVariant::Optimized)
    };
    let d = build_discriminator(&cfg, 3).unwrap();
    let mut gap = 0.0f64;
    for k in 0..cfg.batch_size as u64 {
        let window = unit_tensor(&[3, 32, 32], 10 + k).cast::<f32>();
        let fake = unit_tensor(&[3, 32, 32], 50 + k).cast::<f32>();
        let truth = unit_tensor(&[3, 32, 32], 90 + k).cast::<f32>();
        let (l, _) = generator_loss(&d.spec, &d.state, &window, &fake, &truth, cfg.lambda, cfg.adversarial_weight)
            .map_err(|e| e.to_string())?;
        let direct = l.adversarial + 10.0 * l.l1;
        ensure!((l.total - direct).abs() <= 1e-9 * direct.abs().max(1.0), "sample {k}: {} vs {direct}", l.total);
        gap = gap.max((l.total - direct).abs());
    }
    Ok(format!("14 rows match, 6 gray rows removed, total = adversarial + 10 L1 (gap {gap:.1e})"))
}

fn analytic_losses() -> Outcome {
    let half = Tensor::new(vec![1, 4, 4], vec![0.5f64; 16]).unwrap();
    let adv = loss_adv(&half, &half).map_err(|e| e.to_string())?;
    let expected = -2.0 * 2f64.ln();
    ensure!((adv.objective - expected).abs() <= f64::EPSILON, "objective {} vs {expected}", adv.objective);
    let img = random_tensor(&[3, 8, 8], 4);
    let l = loss_l1(&img, &img).map_err(|e| e.to_string())?;
    ensure!(l == 0.0, "L1 of identical images {l}");
    Ok(format!("objective at D = 0.5 is {:.15}, identical-image L1 is 0", adv.objective))
}

struct Pipeline {
    first: PathBuf,
    second: PathBuf,
    stage_times: BTreeMap<&'static str, Duration>,
    demo_time: Duration,
    failure: Option<String>,
}

fn egoface(out: &Path, args: &[&str]) -> std::result::Result<Duration, String> {
    let t = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_egoface"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        output.status.success(),
        "`egoface {}` failed ({}): {}",
        args.join(" "),
        output.status,
        String::from_utf8_lossy(&output.stderr).trim()
    );
    Ok(t.elapsed())
}

/// First run: the stages one by one. Second run: `demo`. Both write to the
/// same path so the recorded configuration matches.
fn run_pipeline(base: &Path) -> Pipeline {
    let out = base.join("run");
    let mut p = Pipeline {
        first: base.join("first"),
        second: out.clone(),
        stage_times: BTreeMap::new(),
        demo_time: Duration::ZERO,
        failure: None,
    };
    let stages: [(&'static str, &[&str]); 9] = [
        ("synth-model", &["synth-model"]),
        ("gen-data", &["gen-data"]),
        ("fit", &["fit"]),
        ("train-ego2exp", &["train-ego2exp"]),
        ("train-exp2vreal", &["train-exp2vreal"]),
        ("reenact", &["reenact"]),
        ("eval-geo", &["eval-geo"]),
        ("eval-mse", &["eval-mse"]),
        ("bench", &["bench"]),
    ];
    for (name, args) in stages {
        eprintln!("acceptance: {name}");
        match egoface(&out, args) {
            Ok(d) => {
                p.stage_times.insert(name, d);
            }
            Err(e) => {
                p.failure = Some(e);
                return p;
            }
        }
    }
    if let Err(e) = std::fs::rename(&out, &p.first) {
        p.failure = Some(e.to_string());
        return p;
    }
    eprintln!("acceptance: demo");
    match egoface(&out, &["demo"]) {
        Ok(d) => p.demo_time = d,
        Err(e) => p.failure = Some(e),
    }
    p
}

fn read_json(path: &Path) -> std::result::Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn number(v: &Value, key: &str) -> std::result::Result<f64, String> {
    v[key].as_f64().ok_or_else(|| format!("missing number {key:?}"))
}

fn stage_time(p: &Pipeline, names: &[&str]) -> Duration {
    names.iter().filter_map(|n| p.stage_times.get(n)).sum()
}

fn ego2exp_signal(p: &Pipeline) -> Outcome {
    if let Some(e) = &p.failure {
        return Err(e.clone());
    }
    let manifest = read_json(&p.first.join("data/ego2exp/manifest.json"))?;
    let entries = manifest["entries"].as_array().ok_or("manifest without entries")?;
    let test = entries.iter().filter(|e| e["split"] == "test").count();
    ensure!(entries.len() == 4000, "{} head-mounted frames", entries.len());
    let report = read_json(&p.first.join("reports/ego2exp_eval.json"))?;
    let (mse, base) = (number(&report, "regressor_mse")?, number(&report, "mean_predictor_mse")?);
    let (geo, geo_base) = (
        number(&report, "regressor_geometry_mm")?,
        number(&report, "mean_predictor_geometry_mm")?,
    );
    ensure!(mse < base, "held-out expression mse {mse:.5} vs mean {base:.5}");
    ensure!(geo < geo_base, "geometry error {geo:.4} mm vs mean {geo_base:.4} mm");
    let took = stage_time(p, &["train-ego2exp", "eval-geo"]);
    ensure!(took < Duration::from_secs(30 * 60), "training and evaluation took {took:.0?}");
    Ok(format!(
        "{test} held-out frames: mse {mse:.4} vs {base:.4}, geometry {geo:.3} vs {geo_base:.3} mm ({took:.0?})"
    ))
}

fn self_reenactment(p: &Pipeline) -> Outcome {
    if let Some(e) = &p.failure {
        return Err(e.clone());
    }
    let report = read_json(&p.first.join("reports/reenactment.json"))?;
    let variants = report["variants"].as_array().ok_or("report without variants")?;
    ensure!(variants.len() == 2, "{} variants evaluated", variants.len());
    let mut means = Vec::new();
    for v in variants {
        let m = number(v, "mean_mse")?;
        ensure!(m < 0.01, "{} held-out mse {m:.5}", v["variant"]);
        means.push((v["variant"].as_str().unwrap_or("?").to_string(), m, number(v, "common_mean_mse")?));
    }
    let (lo, hi) = (means[0].2.min(means[1].2), means[0].2.max(means[1].2));
    ensure!(hi <= 2.0 * lo, "common-size mse {lo:.5} and {hi:.5} differ by more than 2x");
    let took = stage_time(p, &["train-exp2vreal", "eval-mse"]);
    ensure!(took < Duration::from_secs(60 * 60), "translator training and evaluation took {took:.0?}");
    let listed: Vec<String> = means.iter().map(|(n, m, _)| format!("{n} {m:.5}")).collect();
    Ok(format!("{}; ratio {:.2} ({took:.0?})", listed.join(", "), hi / lo))
}

fn tree(root: &Path) -> std::result::Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.file_name().unwrap().to_string_lossy().starts_with("timing") {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn reproducibility(p: &Pipeline) -> Outcome {
    if let Some(e) = &p.failure {
        return Err(e.clone());
    }
    let (a, b) = (tree(&p.first)?, tree(&p.second)?);
    let only_a: Vec<_> = a.keys().filter(|k| !b.contains_key(*k)).collect();
    let only_b: Vec<_> = b.keys().filter(|k| !a.contains_key(*k)).collect();
    ensure!(only_a.is_empty() && only_b.is_empty(), "file sets differ: {only_a:?} / {only_b:?}");
    let differing: Vec<_> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure!(differing.is_empty(), "{} files differ, first {:?}", differing.len(), differing[0]);
    let frames = p.second.join("reenact/optimized/frames");
    let reenacted = std::fs::read_dir(&frames).map(|d| d.count()).unwrap_or(0);
    ensure!(reenacted > 0, "no reenacted frames in {}", frames.display());
    ensure!(p.demo_time < Duration::from_secs(90 * 60), "demo took {:.0?}", p.demo_time);
    Ok(format!(
        "{} artifacts byte-identical across stage-by-stage and demo runs, {reenacted} reenacted frames (demo {:.0?})",
        a.len(),
        p.demo_time
    ))
}

fn bench_protocol(p: &Pipeline) -> Outcome {
    if let Some(e) = &p.failure {
        return Err(e.clone());
    }
    // The demo timed every component with the trained models.
    let all = read_json(&p.second.join("reports/timing.json"))?;
    let rows = all["rows"].as_array().ok_or("timing report without rows")?;
    let ms = |name: &str| rows.iter().find(|r| r["component"] == name).and_then(|r| r["mean_ms"].as_f64());
    let (full, optimized) = (ms("full").ok_or("no full row")?, ms("optimized").ok_or("no optimized row")?);
    ensure!(optimized < full, "optimized translator {optimized:.3} ms not below full {full:.3} ms");

    egoface(&p.second, &["bench", "--components", "resnet-analog,albedo,optimized"])?;
    let report = read_json(&p.second.join("reports/timing.json"))?;
    let rows = report["rows"].as_array().ok_or("timing report without rows")?;
    let shape: Vec<(&str, &str)> = rows
        .iter()
        .map(|r| (r["stage"].as_str().unwrap_or("?"), r["component"].as_str().unwrap_or("?")))
        .collect();
    let stage = |s: Stage| serde_json::to_value(s).unwrap();
    let expected = [
        (stage(Stage::Ego2Exp), "resnet-analog"),
        (stage(Stage::Rendering), "albedo"),
        (stage(Stage::Exp2VRealFace), "optimized"),
    ];
    let matches = rows.len() == 3 && rows.iter().zip(&expected).all(|(r, (s, c))| r["stage"] == *s && r["component"] == *c);
    ensure!(matches, "rows {shape:?}");
    let frames = report["frames"].as_u64().ok_or("no frame count")?;
    let reps = report["repetitions"].as_u64().ok_or("no repetition count")?;
    ensure!(reps == 2 && frames == 100, "{frames} frames x {reps} passes");
    let sum: f64 = rows.iter().filter_map(|r| r["mean_ms"].as_f64()).sum();
    let total = number(&report, "end_to_end_ms")?;
    ensure!((total - sum).abs() <= 1e-9 * sum.max(1.0), "end-to-end {total} vs sum {sum}");
    let csv = std::fs::read_to_string(p.second.join("reports/timing.csv")).map_err(|e| e.to_string())?;
    ensure!(csv.lines().count() == 5, "timing csv has {} lines", csv.lines().count());
    Ok(format!(
        "{frames} frames x {reps} passes, 3 rows + end-to-end {total:.2} ms; optimized {optimized:.2} < full {full:.2} ms"
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id: u32, title: &'static str, f: &dyn Fn() -> Outcome| {
        if filter.as_deref().is_some_and(|f| !title.contains(f)) {
            return;
        }
        let outcome = guarded(f);
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {id:>2} {tag}  {title}: {detail}");
        results.push((id, title, outcome));
    };
    record(1, "model dimensionality", &model_dimensionality);
    record(2, "linearity", &linearity);
    record(3, "gradient fidelity", &gradient_fidelity);
    record(4, "reconstruction round trip", &reconstruction_round_trip);
    record(5, "sync protocol", &sync_protocol);
    record(7, "translator architecture", &architecture_conformance);
    record(9, "analytic gan losses", &analytic_losses);

    let pipeline_titles = ["regressor learning signal", "self-reenactment", "reproducibility", "benchmark protocol"];
    if filter.as_deref().is_none_or(|f| pipeline_titles.iter().any(|t| t.contains(f))) {
        let dir = tempfile::tempdir().expect("temporary directory");
        let p = run_pipeline(dir.path());
        record(6, "regressor learning signal", &|| ego2exp_signal(&p));
        record(8, "self-reenactment", &|| self_reenactment(&p));
        record(10, "reproducibility", &|| reproducibility(&p));
        record(11, "benchmark protocol", &|| bench_protocol(&p));
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
