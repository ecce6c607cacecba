use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use egoface_cli::commands;
use egoface_cli::config::{parse_components, parse_config, RunConfig};
use egoface_cli::{CliError, Result};
use egoface_nets::exp2vreal::GanVariant;

#[derive(Parser)]
#[command(name = "egoface", version, about = "Egocentric face capture and frontal reenactment")]
struct Cli {
    /// JSON run configuration; absent keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the parametric face model.
    SynthModel,
    /// Render the head-mounted and tripod datasets.
    GenData,
    /// Fit the model to tripod frames.
    Fit,
    /// Train the expression regressor.
    TrainEgo2exp,
    /// Train the image translators.
    TrainExp2vreal {
        #[arg(long)]
        variant: Option<GanVariant>,
    },
    /// Drive a frontal face from held-out head-mounted frames.
    Reenact {
        #[arg(long)]
        variant: Option<GanVariant>,
    },
    /// Per-vertex geometry error of the regressor.
    EvalGeo,
    /// Self-reenactment error of the translators.
    EvalMse {
        #[arg(long)]
        variant: Option<GanVariant>,
    },
    /// Per-frame timing of the pipeline components.
    Bench {
        /// Comma-separated component names.
        #[arg(long)]
        components: Option<String>,
    },
    /// Run every stage in order.
    Demo,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("EGOFACE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config("EGOFACE_THREADS", format!("expected a positive integer, got {value:?}")))?;
    // Fails only if a pool already exists, which cannot happen this early.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = load_config(&cli)?;
    let variants = |v: Option<GanVariant>| v.map_or_else(|| cfg.exp2vreal.variants.clone(), |v| vec![v]);
    match cli.command {
        Command::SynthModel => commands::synth_model(&cfg),
        Command::GenData => commands::gen_data(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::TrainEgo2exp => commands::train_ego2exp(&cfg),
        Command::TrainExp2vreal { variant } => commands::train_exp2vreal(&cfg, &variants(variant)),
        Command::Reenact { variant } => commands::reenact(&cfg, variant.unwrap_or(cfg.exp2vreal.reenact_variant)),
        Command::EvalGeo => commands::eval_geo(&cfg),
        Command::EvalMse { variant } => commands::eval_mse(&cfg, &variants(variant)),
        Command::Bench { components } => {
            let components = match components {
                Some(list) => parse_components(&list)?,
                None => cfg.eval.bench_components.clone(),
            };
            commands::bench(&cfg, &components)
        }
        Command::Demo => commands::demo(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
