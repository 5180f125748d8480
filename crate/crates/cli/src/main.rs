//! `sdelab`: run SDE experiments and write CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 2 usage, 3 model domain, 4 resource, 1 otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdelab_core::SdeError;

#[derive(Debug, Parser)]
#[command(
    name = "sdelab",
    version,
    about = "Euler–Maruyama experiments for non-Lipschitz SDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate paths and write one CSV per path plus an explosion summary.
    Simulate(commands::SimulateArgs),
    /// Check a sufficient condition by sampling.
    Check(commands::CheckArgs),
    /// Estimate E sup|X|^p and evaluate the moment bounds.
    Moments(commands::MomentsArgs),
    /// Coupled runs from two starts: how often do they come within ε?
    Confluence(commands::ConfluenceArgs),
    /// Order preservation for one-dimensional models.
    Monotone(commands::MonotoneArgs),
    /// Coupled-resolution Cauchy diagnostic against a reference level.
    Converge(commands::ConvergeArgs),
    /// RMS endpoint error against a closed-form solution.
    StrongError(commands::StrongErrorArgs),
    /// Evaluate a test function by quadrature.
    EvalTestFn(commands::EvalTestFnArgs),
}

#[derive(Debug)]
pub enum CliError {
    Sde(SdeError),
    Io(std::io::Error),
}

impl From<SdeError> for CliError {
    fn from(e: SdeError) -> Self {
        CliError::Sde(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Sde(SdeError::Usage(_)) => 2,
            CliError::Sde(SdeError::ModelDomain { .. }) => 3,
            CliError::Sde(SdeError::Resource(_)) => 4,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Sde(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Check(a) => commands::check(a),
        Command::Moments(a) => commands::moments(a),
        Command::Confluence(a) => commands::confluence(a),
        Command::Monotone(a) => commands::monotone(a),
        Command::Converge(a) => commands::converge(a),
        Command::StrongError(a) => commands::strong_error(a),
        Command::EvalTestFn(a) => commands::eval_test_fn(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdelab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
