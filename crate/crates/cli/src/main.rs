//! `qacal`: command-line front end for QA calibration.
//!
//! Exit status is 0 on success, 1 when the input or arguments are invalid and
//! 2 when the environment fails (I/O and the like).

mod args;
mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::Cli;

/// Error type for the binary: keeps the exit-code class alongside the cause.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(anyhow::anyhow!(msg.into()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<qacal_core::Error> for CliError {
    fn from(e: qacal_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.into())
        } else {
            CliError::Runtime(e.into())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn run(argv: Vec<OsString>) -> u8 {
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return 1;
    }
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match commands::dispatch(cli.command, sub) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::Validation(inner) | CliError::Runtime(inner)) = &e;
            eprintln!("error: {inner}");
            e.code()
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("QACAL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow::anyhow!("QACAL_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os().collect()))
}
