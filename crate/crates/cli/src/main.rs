use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use driftlens::cka::Estimator;

mod commands;
mod store;

#[derive(Parser, Debug)]
#[command(name = "driftlens", version, about = "Measure domain shift from model-activation similarity")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    estimator: Option<Estimator>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Directory (or single CSV) of published reference tables; `correlate`
    /// and `select` then run on those instead of a synthetic run.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Also write SVG heatmaps.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate every configured domain.
    Synth,
    /// Fit one model per (domain, fold).
    Train,
    /// Cross-domain MAE table and activation dumps.
    Eval,
    /// Shift metric tables from activation dumps.
    Metrics {
        /// ds-diff, ds-sim, model-sim or all.
        #[arg(long, default_value = "all")]
        kind: String,
    },
    /// Correlate each metric with MAE.
    Correlate,
    /// DS-diff model selection against worst/average/best baselines.
    Select,
    /// Heatmap CSVs (and SVGs with --svg).
    Report,
    /// Every stage in order.
    Run,
}

fn threads_from_env() -> Result<()> {
    if let Ok(v) = std::env::var("DRIFTLENS_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("DRIFTLENS_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("cannot configure thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match threads_from_env().and_then(|_| commands::dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
