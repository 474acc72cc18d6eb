//! `mosic` — command-line harness for constrained subgroup identification.
//!
//! Four subcommands share one declarative JSON configuration: `generate`
//! draws a synthetic dataset, `fit` trains a single subgroup model,
//! `experiment` replicates train/test splits with optional cross-validation
//! and group-size sweeps, and `typei` measures the false-rejection rate on a
//! zero-effect generator. Exit codes: 0 success, 2 configuration error,
//! 3 I/O error, 4 collapsed/infeasible fit (report still written),
//! 5 numerical failure.

mod commands;
mod config;
mod presets;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mosic::error::{Error, Result};

use commands::{error_exit_code, OutputOptions, RunMeta};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "mosic",
    version,
    about = "Constrained maximal-effect subgroup identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw the configured synthetic dataset and write it as CSV.
    Generate(RunArgs),
    /// Fit one subgroup model on the whole dataset.
    Fit(RunArgs),
    /// Run replicated train/test splits and aggregate test metrics.
    Experiment(RunArgs),
    /// Measure the false-rejection rate on a zero-effect generator.
    Typei(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Fit(_) => "fit",
            Command::Experiment(_) => "experiment",
            Command::Typei(_) => "typei",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Generate(a) | Command::Fit(a) | Command::Experiment(a) | Command::Typei(a) => {
                a
            }
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Path to a JSON run configuration (exactly one of --config/--preset).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Built-in configuration preset (exactly one of --config/--preset).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Override the configured output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the configured master seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,

    /// Also write the per-iteration training trace (fit only).
    #[arg(long)]
    trace: bool,

    /// Also write per-row pseudo-outcomes and scores (fit only).
    #[arg(long)]
    dump_phi: bool,
}

/// Resolves the run configuration from `--config` or `--preset` and applies
/// the command-line overrides before anything else sees it.
fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => presets::preset(name).ok_or_else(|| {
            Error::parameter(format!(
                "unknown preset '{}'; available: {}",
                name,
                presets::PRESET_NAMES.join(", ")
            ))
        })?,
        _ => {
            return Err(Error::parameter(
                "pass exactly one of --config <FILE> or --preset <NAME>",
            ))
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<i32> {
    match command {
        Command::Generate(_) => commands::cmd_generate(cfg),
        Command::Fit(args) => commands::cmd_fit(
            cfg,
            OutputOptions {
                trace: args.trace,
                dump_phi: args.dump_phi,
            },
        ),
        Command::Experiment(_) => commands::cmd_experiment(cfg),
        Command::Typei(_) => commands::cmd_typei(cfg),
    }
}

fn run(cli: &Cli) -> i32 {
    let start = Instant::now();
    let cfg = match resolve(cli.command.args()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {}", e);
            return error_exit_code(&e);
        }
    };
    if let Some(threads) = cfg.experiment.parallelism {
        // a failure here means a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match dispatch(&cli.command, &cfg) {
        Ok(exit_code) => {
            let meta = RunMeta {
                command: cli.command.name().to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed: cfg.seed,
                exit_code,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
            };
            if let Err(e) = report::write_json(&meta, &cfg.output_dir.join("run_meta.json")) {
                eprintln!("error: {}", e);
                return error_exit_code(&e);
            }
            exit_code
        }
        Err(e) => {
            eprintln!("error: {}", e);
            error_exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(&cli) as u8)
}
