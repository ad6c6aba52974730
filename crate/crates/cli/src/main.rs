mod stages;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Data-driven reachable sets with a diffusion-model score and PAC
/// calibration.
#[derive(Debug, Parser)]
#[command(name = "reachcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Artifact directory.
    #[arg(long, global = true, default_value = "reachcal-out")]
    out: PathBuf,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate trajectories into dataset.rchd.
    Generate,
    /// Train the denoiser into model.ckpt.
    Train,
    /// Calibrate thresholds into calibration.json.
    Calibrate,
    /// Test-split FNR, grid IoU/precision, volume bound and masks.
    Evaluate,
    /// Repeated calibration/test re-splits of a fixed score pool.
    PacValidate,
    /// Acceptance rate under additive Gaussian perturbation.
    Sensitivity,
    /// Christoffel-function baseline over the configured degrees.
    BaselineChristoffel,
    /// Print the effective configuration as JSON.
    PrintConfig,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REACHCAL_LOG", "info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = stages::load_config(cli.config.as_deref(), cli.seed)?;
    let ctx = stages::Context::new(cfg, cli.out)?;
    let written = match cli.command {
        Command::Generate => stages::generate(&ctx),
        Command::Train => stages::train(&ctx),
        Command::Calibrate => stages::calibrate(&ctx),
        Command::Evaluate => stages::evaluate(&ctx),
        Command::PacValidate => stages::pac_validate(&ctx),
        Command::Sensitivity => stages::sensitivity(&ctx),
        Command::BaselineChristoffel => stages::baseline_christoffel(&ctx),
        Command::PrintConfig => {
            println!("{}", serde_json::to_string_pretty(&ctx.cfg)?);
            return Ok(());
        }
    }?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
