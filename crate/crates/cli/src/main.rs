// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::ExperimentConfig;

/// Experiments on the p-compliance of crack sets.
#[derive(Debug, Parser)]
#[command(name = "pcompliance", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one configuration and write its compliance report.
    Solve(Common),
    /// Capacities of segments of several lengths, with scaling fits.
    CapacitySweep(Common),
    /// The vanishing-compliance crack grids for a ladder of n.
    SweepVanishing(Common),
    /// Best Poincaré constants of crack-pinned cubes.
    Poincare(Common),
    /// Calibrate and check the source-stability estimate.
    Stability(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, run): (&Common, commands::Runner) = match &cli.command {
        Command::Solve(c) => (c, commands::solve),
        Command::CapacitySweep(c) => (c, commands::capacity_sweep),
        Command::SweepVanishing(c) => (c, commands::sweep_vanishing),
        Command::Poincare(c) => (c, commands::poincare),
        Command::Stability(c) => (c, commands::stability),
    };
    match execute(common, run) {
        Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
        Ok(failed) => {
            for check in failed {
                eprintln!("check failed: {check}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(common: &Common, run: commands::Runner) -> anyhow::Result<Vec<String>> {
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()?;
    }
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&common.out)?;
    let base = common
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = commands::Context {
        config,
        out: common.out.clone(),
        base,
    };
    run(&ctx)
}
