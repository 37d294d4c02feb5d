//! `bvflow`: configuration-driven runs of metric gradient flows,
//! vanishing-viscosity sweeps, energy-dissipation audits, jump-transition
//! costs, and BV-solution validation.
//!
//! Exit codes: 0 on success, 2 on solver errors, 3 on configuration or flag
//! errors.

mod commands;
mod config;
mod io;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::CliError;

/// Environment variable giving the default output directory.
const OUT_ENV: &str = "BVFLOW_OUT";

#[derive(Parser)]
#[command(name = "bvflow", version, about = "metric gradient flows, sweeps and BV validation")]
struct Cli {
    /// Path to the configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: $BVFLOW_OUT, the [output] section, or `.`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Fail a sweep if any family member fails.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one flow and its energy-dissipation audit.
    Flow,
    /// Run a vanishing-viscosity family, extract and validate the limit.
    Sweep,
    /// Transition cost between two states at a frozen time.
    Jumpcost {
        /// Frozen time of the transition.
        #[arg(long)]
        t: f64,
        /// Start state, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        /// End state, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        to: String,
        /// Optional pinned intermediate state.
        #[arg(long, allow_hyphen_values = true)]
        mid: Option<String>,
        /// Conformal cap L (defaults to the configured dissipation growth).
        #[arg(long = "cap-l")]
        cap_l: Option<f64>,
        /// Polyline segments of the path optimizer.
        #[arg(long)]
        segments: Option<usize>,
        /// Deterministic multi-starts of the path optimizer.
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Re-audit a stored trajectory CSV.
    Audit {
        /// Path to a trajectory CSV produced by `flow` or `sweep`.
        #[arg(long)]
        traj: PathBuf,
    },
    /// Validate a stored BV curve as a BV solution.
    #[command(name = "validate-bv")]
    ValidateBv {
        /// Path to a BV sample CSV (`t,u_0,...`).
        #[arg(long)]
        bv: PathBuf,
    },
}

fn parse_state(flag: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|_| CliError::Config(format!("--{flag}: not a decimal vector: {value}")))
}

fn out_dir(cli: &Cli, cfg_dir: Option<String>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg_dir.map(PathBuf::from))
        .or_else(|| std::env::var(OUT_ENV).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let config = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let cfg_out = config::Config::load(config).ok().and_then(|c| {
        c.get("output", "dir").map(str::to_string)
    });
    match &cli.command {
        Command::Flow => commands::cmd_flow(config, &out_dir(cli, cfg_out)),
        Command::Sweep => commands::cmd_sweep(config, &out_dir(cli, cfg_out), cli.strict),
        Command::Jumpcost { t, from, to, mid, cap_l, segments, starts } => {
            let from = parse_state("from", from)?;
            let to = parse_state("to", to)?;
            let mid = match mid {
                Some(m) => Some(parse_state("mid", m)?),
                None => None,
            };
            commands::cmd_jumpcost(
                config,
                *t,
                &from,
                &to,
                mid.as_deref(),
                *cap_l,
                *segments,
                *starts,
            )
        }
        Command::Audit { traj } => commands::cmd_audit(config, traj),
        Command::ValidateBv { bv } => commands::cmd_validate_bv(config, bv),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(3);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bvflow: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
