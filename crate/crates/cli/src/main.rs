//! `slowfol` — command-line front end for the slow-foliation toolkit.
//!
//! Usage: `slowfol <subcommand> --config <file> [--output <dir>] [--seed <u64>]`.
//!
//! Exit codes: 0 success, 1 verification failure (a checked bound was
//! violated; the report is still written), 2 usage/config error (no output
//! files), 3 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use clap::{Args, Parser, Subcommand};
use commands::CommandError;
use config::{EXIT_CONFIG, EXIT_NUMERICAL};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "slowfol",
    version,
    about = "Random slow manifolds and slow-foliation fibers of slow-fast stochastic systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Base seed (overrides the config's seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the hypothesis gate and report the gap condition.
    Check(CommonArgs),
    /// Slow-manifold values over a zeta grid.
    Manifold(CommonArgs),
    /// Slow-fiber values over a zeta grid around a base point.
    Fiber(CommonArgs),
    /// Critical-fiber values over a zeta grid.
    Critical(CommonArgs),
    /// First-order fiber expansion: critical value and eps-coefficient.
    Expand(CommonArgs),
    /// Backward decay rate of two same-fiber points against the envelope.
    Rates(CommonArgs),
    /// Fiber-manifold parallelism deviation, per noise replica.
    Parallel(CommonArgs),
    /// Fiber invariance residual under flow plus noise shift.
    Invariance(CommonArgs),
    /// Distributional convergence of the rescaled fiber to the critical one.
    StudyConvergence(CommonArgs),
    /// Accuracy and Richardson ratios of the first-order expansion.
    StudyOrder(CommonArgs),
    /// Stationary OU diagnostics and the eta/xi law comparison.
    NoiseCheck(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Check(_) => "check",
            Command::Manifold(_) => "manifold",
            Command::Fiber(_) => "fiber",
            Command::Critical(_) => "critical",
            Command::Expand(_) => "expand",
            Command::Rates(_) => "rates",
            Command::Parallel(_) => "parallel",
            Command::Invariance(_) => "invariance",
            Command::StudyConvergence(_) => "study-convergence",
            Command::StudyOrder(_) => "study-order",
            Command::NoiseCheck(_) => "noise-check",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Check(a)
            | Command::Manifold(a)
            | Command::Fiber(a)
            | Command::Critical(a)
            | Command::Expand(a)
            | Command::Rates(a)
            | Command::Parallel(a)
            | Command::Invariance(a)
            | Command::StudyConvergence(a)
            | Command::StudyOrder(a)
            | Command::NoiseCheck(a) => a,
        }
    }
}

fn configure_threads(config_threads: Option<usize>) {
    let from_env = std::env::var("SLOWFOL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = from_env.or(config_threads) {
        // Ignore the error when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn main() {
    let cli = Cli::parse();
    let name = cli.command.name();
    let args = cli.command.args();

    let run = match config::parse_config(&args.config, name, args.seed) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("slowfol {name}: {e}");
            std::process::exit(EXIT_CONFIG);
        }
    };
    configure_threads(run.config.threads);
    let out_dir = args
        .output
        .clone()
        .or_else(|| run.config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("slowfol-out"));

    let outcome = match name {
        "check" => commands::cmd_check(&run, &out_dir),
        "manifold" => commands::cmd_manifold(&run, &out_dir),
        "fiber" => commands::cmd_fiber(&run, &out_dir),
        "critical" => commands::cmd_critical(&run, &out_dir),
        "expand" => commands::cmd_expand(&run, &out_dir),
        "rates" => commands::cmd_rates(&run, &out_dir),
        "parallel" => commands::cmd_parallel(&run, &out_dir),
        "invariance" => commands::cmd_invariance(&run, &out_dir),
        "study-convergence" => commands::cmd_study_convergence(&run, &out_dir),
        "study-order" => commands::cmd_study_order(&run, &out_dir),
        "noise-check" => commands::cmd_noise_check(&run, &out_dir),
        other => unreachable!("unknown command {other}"),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(CommandError::Config(m)) => {
            eprintln!("slowfol {name}: config error: {m}");
            std::process::exit(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("slowfol {name}: {e}");
            std::process::exit(EXIT_NUMERICAL);
        }
    }
}
