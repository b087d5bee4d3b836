//! `mstou`: simulate MSTOU fields, tabulate their moments, fit them by GMM
//! and inspect CAR kernels. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "mstou", version, about = "Mixed spatio-temporal Ornstein-Uhlenbeck random fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Caps the worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one field: field.csv, jumps.csv, diagnostics.csv.
    Simulate,
    /// Mean, covariance and correlation table with quadrature cross-checks.
    Moments,
    /// GMM fits of listed or simulated fields.
    Estimate,
    /// CAR(p) eigenvalues, weights and kernel samples.
    Car,
    /// Truncation MSE bound over a grid of pads.
    MseBound,
    /// Averaged temporal and spatial sample ACFs.
    Acf,
}

fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(error::CliError::Config("--threads must be positive".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (mut config, base) = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let hash = config.hash()?;
    let ctx = Context { config, base, hash };
    let outputs = match cli.command {
        Command::Simulate => commands::simulate_cmd(&ctx)?,
        Command::Moments => commands::moments_cmd(&ctx)?,
        Command::Estimate => commands::estimate_cmd(&ctx)?,
        Command::Car => commands::car_cmd(&ctx)?,
        Command::MseBound => commands::mse_cmd(&ctx)?,
        Command::Acf => commands::acf_cmd(&ctx)?,
    };
    outputs.commit(&cli.out)?;
    Ok(outputs.names().map(|n| cli.out.join(n)).collect())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
