use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use phasenoise::bounds::Model;

mod commands;
mod config;

use config::ExperimentConfig;

/// Phase-noise MIMO channel experiments.
#[derive(Debug, Parser)]
#[command(name = "phasenoise", version)]
struct Cli {
    /// Experiment config (JSON); a sweep summary is accepted too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write channel input/output samples per SNR point.
    Simulate,
    /// Evaluate lower and upper bounds over the SNR grid and fit the pre-log.
    Sweep,
    /// Print the predicted pre-log.
    Predict {
        #[arg(long)]
        model: Model,
        #[arg(long)]
        nt: usize,
        #[arg(long)]
        nr: usize,
    },
    /// Magnitude-only amplitude recovery trials.
    Recover,
    /// Fast internal consistency checks.
    Selftest,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Simulate => commands::simulate(&load_config(cli)?, &cli.out),
        Command::Sweep => commands::sweep(&load_config(cli)?, &cli.out),
        Command::Recover => commands::recover(&load_config(cli)?, &cli.out),
        Command::Predict { model, nt, nr } => commands::predict(*model, *nt, *nr),
        Command::Selftest => Ok(commands::selftest()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
