//! Command-line front end: TOML configs in, CSV reports out.
//!
//! Exit codes: 0 when a command completes with a verdict (including "fails"
//! and "inconclusive"), 1 for validation errors, 2 for runtime errors.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error at `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    /// A core error raised while checking the config. Parameter errors keep
    /// their own key; others are attributed to `block`.
    pub fn from_core_validation(e: chemostab_core::Error, block: &str) -> Self {
        match e {
            chemostab_core::Error::InvalidParameter { name, reason } => {
                let key = if name.contains('.') || name.starts_with(block) {
                    name
                } else {
                    format!("{block}.{name}")
                };
                CliError::Validation { key, message: reason }
            }
            other => CliError::validation(block, other.to_string()),
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            CliError::Validation { key, .. } => Some(key),
            CliError::Runtime(_) => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Runtime(_) => 2,
        }
    }

    /// `key: value` lines for stderr.
    pub fn block(&self) -> String {
        match self {
            CliError::Validation { key, message } => {
                format!("error: validation\nkey: {key}\nmessage: {message}\nexit_code: 1\n")
            }
            CliError::Runtime(message) => format!("error: runtime\nmessage: {message}\nexit_code: 2\n"),
        }
    }
}

impl From<chemostab_core::Error> for CliError {
    fn from(e: chemostab_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "chemostab", version, about = "Chemotaxis simulation and stability criteria")]
pub struct Cli {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps and multi-seed runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Base seed for random initial data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// One run with diagnostics.
    Simulate,
    /// Hypotheses, constants and the averaged criterion.
    Stability,
    /// Multi-seed gaps, decay fits, energy-inequality check and entire solution.
    StabilityExperiment,
    /// One stability row per point of the declared parameter grid.
    Sweep,
    /// Mesh and time-step refinement study.
    Converge,
}

/// Parses `args` and runs the command, printing to stdout and stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprint!("{}", e.block());
            e.exit_code()
        }
    }
}
