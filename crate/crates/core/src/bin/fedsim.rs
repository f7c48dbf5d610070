//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 when every cell failed (or the sweep could
//! not write its outputs), 2 on a config error (unreadable file, parse
//! failure, or validation failure).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsim::config::ExperimentConfig;
use fedsim::runner::{run_conflict_probe, run_experiment, RunOptions, RunSummary};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated-learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the TOML experiment config.
    config: PathBuf,
    /// Write outputs here instead of the config's output_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run only this seed instead of the config's seed list.
    #[arg(long, value_name = "N")]
    seed_override: Option<u64>,
    /// Suppress progress lines and the final table.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) cell and write per-round metrics.
    Run(CommonArgs),
    /// Run the first strategy only and write per-round similarity snapshots.
    ConflictProbe(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, probe) = match cli.command {
        Command::Run(args) => (args, false),
        Command::ConflictProbe(args) => (args, true),
    };
    let cfg = match ExperimentConfig::load(&args.config) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("config error: {err}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        out_override: args.out,
        seed_override: args.seed_override,
        quiet: args.quiet,
    };
    let outcome = if probe {
        run_conflict_probe(&cfg, &opts)
    } else {
        run_experiment(&cfg, &opts)
    };
    match outcome {
        Ok(RunSummary { ref cells, .. }) if !cells.is_empty() => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("error: every (strategy, seed) cell failed; see failures.log");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
