//! `gradhjb solve|verify|study|simulate --config <path> --out <dir> [--quiet]`
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 property failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Property(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Property(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Property(m) => write!(f, "property failure: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "gradhjb", version, about = "Penalization solver for gradient-constrained HJB equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and write solution.csv, report.json, free_boundary.csv and mask.csv.
    Solve(Common),
    /// Run the property suites and write verify.json.
    Verify(Common),
    /// Refinement study; writes rates.csv.
    Study(Common),
    /// Monte Carlo estimate of the control value; writes mc.json.
    Simulate(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, cmd): (&Common, fn(&RunConfig, &std::path::Path) -> Result<String, CliError>) = match &cli.command {
        Command::Solve(c) => (c, commands::solve),
        Command::Verify(c) => (c, commands::verify),
        Command::Study(c) => (c, commands::study),
        Command::Simulate(c) => (c, commands::simulate),
    };
    let level = if common.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let cfg = RunConfig::load(&common.config)?;
    let out = cfg.out_dir(common.out.as_deref())?;
    let summary = cmd(&cfg, &out)?;
    if !common.quiet {
        println!("{summary}");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
