//! `tethernet`: run capture episodes, optimize thrust actions, and train or
//! evaluate a policy from a scenario file.
//!
//! Exit codes: 0 success, 1 parse or usage error, 2 validation error,
//! 3 divergence, 4 no feasible point, 5 missing checkpoint.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Environment variable with the default worker-thread count.
pub const WORKERS_ENV: &str = "TETHERNET_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "tethernet", version, about = "Tether-net debris capture simulator")]
struct Cli {
    /// Worker threads for parallel episodes (default: $TETHERNET_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one capture episode.
    Simulate {
        config: PathBuf,
        /// Seed for the target offset noise (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Write per-node trajectory CSV here.
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Write the result record here instead of stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Minimize fuel subject to the capture constraints.
    Optimize {
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        case: Option<u8>,
        /// Iterations after the initial design.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for history.csv and best.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy with PPO.
    Train {
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for reward_curve.csv, best.json and last.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a policy checkpoint, or the config's fixed angles, under noise.
    Evaluate {
        config: PathBuf,
        #[arg(long, required_unless_present = "fixed")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the [actions] angles from the config instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        fixed: bool,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = commands::configure_workers(cli.workers) {
        eprintln!("error: {e}");
        return ExitCode::from(e.code());
    }
    let result = match cli.command {
        Command::Simulate { config, seed, traj, json } => commands::simulate(&config, seed, traj.as_deref(), json.as_deref()),
        Command::Optimize {
            config,
            case,
            budget,
            seed,
            out,
        } => commands::optimize(&config, case, budget, seed, &out),
        Command::Train {
            config,
            episodes,
            seed,
            out,
        } => commands::train(&config, episodes, seed, &out),
        Command::Evaluate {
            config,
            checkpoint,
            fixed: _,
            samples,
            seed,
            out,
        } => commands::evaluate(&config, checkpoint.as_deref(), samples, seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
