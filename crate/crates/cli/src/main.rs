//! `proal` — runs active-learning experiment matrices from a config file.
//!
//! Subcommands: `run` executes the (strategy x policy x seed) matrix and
//! writes raw/aggregate CSVs plus a manifest; `validate` checks a config
//! and reports every problem; `aggregate` recomputes the aggregate CSV
//! from an existing raw CSV. `PROAL_OUT_DIR` and `PROAL_JOBS` override
//! the output directory and worker cap when the flags are absent.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use proal_core::config::{parse_config, ConfigError, ExperimentConfig};
use proal_core::runner::{aggregate_from_raw, run_matrix};

#[derive(Parser)]
#[command(
    name = "proal",
    version,
    about = "Active-learning experiment matrix runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment matrix described by a config file.
    Run {
        /// Path to the config (or a manifest from a previous run).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config and PROAL_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker cap, 0 = one per core (overrides config and PROAL_JOBS).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Parse and validate a config, reporting every problem.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute the aggregate CSV from an existing raw CSV.
    Aggregate {
        #[arg(long)]
        raw: PathBuf,
        /// Output path (default: aggregate.csv next to the raw file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> Result<Result<ExperimentConfig, Vec<ConfigError>>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    Ok(parse_config(&text))
}

fn env_override<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn report_config_errors(errors: &[ConfigError]) {
    eprintln!("configuration invalid ({} problem(s)):", errors.len());
    for e in errors {
        eprintln!("  - {e}");
    }
}

fn cmd_run(config: PathBuf, out: Option<PathBuf>, jobs: Option<usize>) -> Result<ExitCode> {
    let mut cfg = match load_config(&config)? {
        Ok(cfg) => cfg,
        Err(errors) => {
            report_config_errors(&errors);
            return Ok(ExitCode::FAILURE);
        }
    };
    if let Some(dir) = out.or_else(|| env_override("PROAL_OUT_DIR")) {
        cfg.output_dir = dir;
    }
    if let Some(jobs) = jobs.or_else(|| env_override("PROAL_JOBS")) {
        cfg.jobs = jobs;
    }

    let summary = run_matrix(&cfg)?;
    println!(
        "ran {} replicates, wrote {} raw rows",
        summary.n_replicates, summary.n_rows
    );
    println!("  raw:       {}", summary.raw_path.display());
    println!("  aggregate: {}", summary.aggregate_path.display());
    println!("  manifest:  {}", summary.manifest_path.display());
    println!("  timings:   {}", summary.timings_path.display());
    if summary.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} replicate(s) failed:", summary.failures.len());
        for f in &summary.failures {
            eprintln!("  - {f}");
        }
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_validate(config: PathBuf) -> Result<ExitCode> {
    match load_config(&config)? {
        Ok(cfg) => {
            let arms = cfg.strategies.len() * cfg.policies.len() * cfg.seeds.len();
            println!(
                "configuration ok: {} strategies x {} policies x {} seeds = {} replicates, {} rounds each",
                cfg.strategies.len(),
                cfg.policies.len(),
                cfg.seeds.len(),
                arms,
                cfg.schedule.n_rounds
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(errors) => {
            report_config_errors(&errors);
            Ok(ExitCode::FAILURE)
        }
    }
}

fn cmd_aggregate(raw: PathBuf, out: Option<PathBuf>) -> Result<ExitCode> {
    let out = out.unwrap_or_else(|| {
        raw.parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_default()
            .join("aggregate.csv")
    });
    let groups = aggregate_from_raw(&raw, &out)?;
    println!("wrote {groups} aggregate rows to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, jobs } => cmd_run(config, out, jobs),
        Command::Validate { config } => cmd_validate(config),
        Command::Aggregate { raw, out } => cmd_aggregate(raw, out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
