//! Command-line front end: argument parsing, artifact export and recipes.

pub mod commands;
pub mod output;
pub mod recipe;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Exit status for invalid input or usage.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for a failed numerical procedure.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn context(self, prefix: impl fmt::Display) -> Self {
        CliError {
            code: self.code,
            message: format!("{prefix}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<zulf_core::Error> for CliError {
    fn from(e: zulf_core::Error) -> Self {
        CliError {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_VALIDATION },
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "zulf", version, about = "Zero- to ultralow-field NMR simulation and control design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate a spin system, acquire an FID and compute its spectrum.
    Simulate(commands::SimulateArgs),
    /// List spectral lines, analytically for XAn or numerically for a system file.
    Lines(commands::LinesArgs),
    /// Compile a gate into a DC pulse program and report its fidelity.
    CompileGate(commands::CompileGateArgs),
    /// Optimize piecewise-constant control fields for a target gate.
    Grape(commands::GrapeArgs),
    /// Simulate randomized benchmarking of single-spin gates.
    Rb(commands::RbArgs),
    /// Tabulate the magnetometer's frequency response.
    Magnetometer(commands::MagnetometerArgs),
    /// Run an experiment recipe file.
    Recipe(recipe::RecipeArgs),
}

/// Output directory flag shared by the subcommands.
#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Directory for artifacts and the manifest.
    #[arg(long, env = "ZULF_OUT_DIR")]
    pub out: Option<PathBuf>,
}

pub const DEFAULT_OUT_DIR: &str = "zulf-out";

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Lines(a) => commands::lines(&a),
        Command::CompileGate(a) => commands::compile_gate(&a),
        Command::Grape(a) => commands::grape(&a),
        Command::Rb(a) => commands::rb(&a),
        Command::Magnetometer(a) => commands::magnetometer(&a),
        Command::Recipe(a) => recipe::run(&a),
    }
}
