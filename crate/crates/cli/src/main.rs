//! Command-line driver: prepare data, train, generate, evaluate and run RUL
//! experiments from one TOML run configuration.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Invocation;
use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cvgan::Error),
    #[error("run directory {} is locked by another command", .0.display())]
    Busy(PathBuf),
    #[error("incompatible evaluators: {0}")]
    Provenance(String),
}

impl CliError {
    /// `(kind, exit code)` for the single-line failure report.
    fn class(&self) -> (&'static str, u8) {
        use cvgan::Error as E;
        match self {
            CliError::Core(E::Config(_) | E::Schedule(_) | E::Contract(_)) => ("config", 2),
            CliError::Core(E::Numerical(_)) => ("numerical", 4),
            CliError::Core(_) => ("data", 3),
            CliError::Busy(_) => ("busy", 5),
            CliError::Provenance(_) => ("provenance", 6),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cvgan", version, about = "Conditional generative models for bearing vibration lifecycles")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root of all run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the windowed dataset container.
    Prepare,
    /// Train the configured model.
    Train,
    /// Train the initial generator used to seed rollouts.
    TrainInit,
    /// Roll out lifecycles under the configured HI schedule.
    Generate,
    /// Score generated data against the real data.
    Evaluate,
    /// Run the RUL prediction experiment.
    Rul,
    /// Merge the reports of several run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write SVG plots of loss traces and RMS profiles.
        #[arg(long)]
        plot: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Report { runs, plot } = &cli.command {
        report::report(runs, &cli.out, *plot)?;
        return Ok(());
    }
    let path = cli.config.ok_or_else(|| cvgan::Error::Config("--config is required".into()))?;
    let (config, text) = RunConfig::load(&path)?;
    let inv = Invocation { config: config.with_seed(cli.seed), text, out: cli.out };
    match cli.command {
        Command::Prepare => commands::prepare(&inv),
        Command::Train => commands::train_cmd(&inv),
        Command::TrainInit => commands::train_init(&inv),
        Command::Generate => commands::generate(&inv),
        Command::Evaluate => commands::evaluate(&inv),
        Command::Rul => commands::rul(&inv),
        Command::Report { .. } => unreachable!(),
    }?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = e.class();
            let reason = serde_json::to_string(&e.to_string()).expect("json string");
            eprintln!("error kind={kind} code={code} reason={reason}");
            ExitCode::from(code)
        }
    }
}
