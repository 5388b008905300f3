//! Command-line front end for the spectral-multiplier laboratory.
//!
//! Subcommands:
//! - `phi-table`: tabulate the extension multiplier along a λ grid (CSV).
//! - `gv-verify`: Monte Carlo reconstruction of the multiplier operators
//!   against their spectral oracles, with per-bin z-scores (CSV).
//! - `norm-probe`: L^p ratio probing of the operator catalog against the
//!   proven constants (JSON).
//! - `checks`: quadrature, PDE-residual, occupation, and semigroup
//!   cross-checks in one pass (JSON summary).
//!
//! Every parameter lives in a flat key=value config file (`--config`),
//! overridable by the global flags; each output file embeds a schema line
//! and the fully-resolved config, so a run is reproducible from its
//! artifact alone.  Exit codes: 0 when every assertion passed, 1 on an
//! assertion or runtime failure, 2 on a usage error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{CliError, Resolved};

#[derive(Parser)]
#[command(name = "rieszlab", version, about = "Extension-multiplier laboratory", long_about = None)]
struct Cli {
    /// Seed for all randomized stages (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Flat key=value config file; later lines win, `#` starts a comment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory output files are written into (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads for the parallel stages; 0 keeps the library default.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate phi_extension, phi_alt, and the closed form along a λ grid.
    PhiTable,
    /// Reconstruct the multiplier operators by Monte Carlo and report
    /// per-bin z-scores against the spectral oracle.
    GvVerify,
    /// Probe L^p operator-norm ratios and compare against proven bounds.
    NormProbe,
    /// Run the quadrature, residual, occupation, and semigroup checks.
    Checks,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let name = match cli.command {
        Command::PhiTable => "phi-table",
        Command::GvVerify => "gv-verify",
        Command::NormProbe => "norm-probe",
        Command::Checks => "checks",
    };
    let cfg = Resolved::from_sources(
        name,
        cli.config.as_deref(),
        cli.seed,
        cli.threads,
        cli.out_dir.as_deref(),
    )?;
    let threads = cfg.usize("threads")?;
    if threads > 0 {
        // Ignore the error: the global pool can only be set once per
        // process, and a second attempt means it is already as requested.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::PhiTable => commands::cmd_phi_table(&cfg),
        Command::GvVerify => commands::cmd_gv_verify(&cfg),
        Command::NormProbe => commands::cmd_norm_probe(&cfg),
        Command::Checks => commands::cmd_checks(&cfg),
    }
}
