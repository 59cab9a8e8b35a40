//! `homefed`: configuration-driven experiment runner.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage, configuration
//! or input errors.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{Context, Failure};
use config::{ExperimentConfig, ScheduleSource};

pub const DEFAULT_OUT: &str = "homefed-out";

#[derive(Debug, Parser)]
#[command(name = "homefed", version, about = "Local, centralized and federated activity prediction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Named deployment schedule; overrides the configuration.
    #[arg(long, global = true)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Turn raw logs (or a synthetic routine) into canonical event files.
    Preprocess,
    /// Run the day-by-day simulation and write accuracy.csv.
    Simulate,
    /// Crossover, regret and activity proportions from accuracy.csv.
    Analyze,
    /// Leave-one-home-out evaluation of the benefit classifiers.
    Advise,
    /// Preprocess, simulate, analyze and advise in one go.
    Report,
}

/// Applies command-line overrides to the configuration.
pub fn context(cli: &Cli) -> Result<Context, Failure> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(Failure::Usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(name) = &cli.preset {
        config.schedule = Some(ScheduleSource::Preset(name.clone()));
    }
    config.validate().map_err(Failure::Usage)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(Context { config, out })
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let ctx = context(cli)?;
    match cli.command {
        Command::Preprocess => commands::preprocess(&ctx).map(drop),
        Command::Simulate => commands::simulate(&ctx).map(drop),
        Command::Analyze => commands::analyze(&ctx).map(drop),
        Command::Advise => commands::advise(&ctx).map(drop),
        Command::Report => commands::report(&ctx).map(drop),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            f.exit_code()
        }
    }
}
