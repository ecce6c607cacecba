use std::path::Path;
use std::process::{Command, Output};

use egoface_cli::config::{parse_components, parse_config, parse_config_str, to_json, RunConfig};
use egoface_cli::CliError;
use egoface_nets::exp2vreal::GanVariant;

fn egoface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egoface"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config_path(err: CliError) -> String {
    match err {
        CliError::Config { path, .. } => path,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn empty_document_gives_defaults() {
    let cfg = parse_config_str("{}").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.basis.dims.vertices, 500);
    assert_eq!(cfg.simulator.roaming_scenarios.len() * cfg.simulator.frames_per_sequence, 4000);
    assert_eq!(cfg.exp2vreal.variants, [GanVariant::Full, GanVariant::Optimized]);
    assert_eq!(cfg.exp2vreal.lambda, 10.0);
}

#[test]
fn config_round_trips() {
    let mut cfg = RunConfig {
        seed: 99,
        ..RunConfig::default()
    };
    cfg.exp2vreal.epochs = 3;
    cfg.simulator.export.sync_offsets = vec![1, -2];
    let text = to_json(&cfg);
    let back = parse_config_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(to_json(&back), text);
}

#[test]
fn errors_name_the_offending_path() {
    let path = config_path(parse_config_str(r#"{"exp2vreal": {"lambda": -1}}"#).unwrap_err());
    assert_eq!(path, "exp2vreal.lambda");
    let path = config_path(parse_config_str(r#"{"exp2vreal": {"lamda": 10}}"#).unwrap_err());
    assert_eq!(path, "exp2vreal.lamda");
    let path = config_path(parse_config_str(r#"{"simulator": {"frames_per_sequence": "many"}}"#).unwrap_err());
    assert_eq!(path, "simulator.frames_per_sequence");
    let path = config_path(parse_config_str(r#"{"colour": 1}"#).unwrap_err());
    assert_eq!(path, "colour");
    let path = config_path(parse_config_str(r#"{"eval": {"bench_components": ["albedo", "vgg"]}}"#).unwrap_err());
    assert_eq!(path, "eval.bench_components[1]");
    let path = config_path(parse_config_str(r#"{"ego2exp": {"output_dim": 5}}"#).unwrap_err());
    assert_eq!(path, "ego2exp.output_dim");
    assert!(parse_config(Path::new("/nonexistent/egoface.json")).is_err());
}

#[test]
fn component_lists_are_checked() {
    assert_eq!(parse_components("resnet-analog, albedo,optimized").unwrap(), ["resnet-analog", "albedo", "optimized"]);
    assert!(parse_components("").is_err());
    assert!(parse_components("albedo,gpu").is_err());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"exp2vreal": {"lambda": -1}}"#).unwrap();
    let o = egoface(&["synth-model", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exp2vreal.lambda"), "{}", stderr(&o));

    let o = egoface(&["bench", "--components", "albedo,tpu", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = egoface(&["fit", "--config", "/nonexistent/egoface.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reenact_without_a_generator_names_the_weights_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = egoface(&["reenact", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("exp2vreal_optimized.egfw"), "{}", stderr(&o));
    let o = egoface(&["reenact", "--variant", "full", "--out", dir.path().to_str().unwrap()]);
    assert!(stderr(&o).contains("exp2vreal_full.egfw"), "{}", stderr(&o));
    let o = egoface(&["gen-data", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("synth-model"), "{}", stderr(&o));
}

#[test]
fn bench_report_has_one_row_per_component() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    std::fs::write(&cfg, r#"{"eval": {"bench_frames": 6}}"#).unwrap();
    let out = dir.path().join("out");
    let o = egoface(&[
        "bench",
        "--components",
        "resnet-analog,albedo,optimized",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("reports/timing.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(names, ["resnet-analog", "albedo", "optimized", "sum"]);
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(table.contains("End-to-end"), "{table}");
}

const SMALL: &str = r#"{
  "simulator": {
    "frames_per_sequence": 60,
    "studio_sequences": 2,
    "export": {"test_fraction": 0.4, "sync_period_s": 1.0, "sync_offsets": [3, -4, 5, -2]}
  },
  "recon": {"frames": 2},
  "ego2exp": {"epochs": 1},
  "exp2vreal": {"epochs": 1},
  "eval": {"reenact_sequence": 1, "reenact_frames": 4, "bench_frames": 4}
}"#;

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.file_name().unwrap().to_string_lossy().starts_with("timing") {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn demo_matches_the_stages_run_one_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let run = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        let o = egoface(&all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    for stage in [
        "synth-model",
        "gen-data",
        "fit",
        "train-ego2exp",
        "train-exp2vreal",
        "reenact",
        "eval-geo",
        "eval-mse",
        "bench",
    ] {
        run(&[stage]);
    }
    let first = files(&out);
    std::fs::remove_dir_all(&out).unwrap();
    run(&["demo"]);
    let second = files(&out);
    assert_eq!(first.len(), second.len());
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.0, b.0);
        assert!(a.1 == b.1, "{} differs", a.0);
    }
    assert!(first.iter().any(|(p, _)| p.starts_with("reenact/optimized/frames/")));
    assert!(first.iter().any(|(p, _)| p == "reports/reenactment.json"));

    let o = egoface(&["demo", "--seed", "8", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("other").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let basis = |root: &Path| std::fs::read(root.join("model/basis.bin")).unwrap();
    assert_ne!(basis(&out), basis(&dir.path().join("other")));
}
