//! `sonic`: generate data, train, evaluate, verify and benchmark oriented
//! spectral convolution networks.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 a verification
//! (oracle suite or gradient check) failed.

mod commands;
mod config;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use config::{Flags, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] sonic_core::SonicError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sonic", version, about = "Oriented continuous spectral convolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a task dataset (binary file, JSON index, previews).
    Gen,
    /// Train a model and log per-epoch metrics.
    Train,
    /// Evaluate a trained model on clean and perturbed test samples.
    Eval,
    /// Compare analytic gradients with central differences.
    Gradcheck,
    /// Run the oracle verification suite.
    Verify,
    /// Sample a saved model's symbol on several grids.
    Resample,
    /// Write the normalized spectral energy of every block.
    ExportSpectrum,
    /// Time one block forward pass across resolutions.
    Bench,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Gradcheck => "gradcheck",
            Command::Verify => "verify",
            Command::Resample => "resample",
            Command::ExportSpectrum => "export-spectrum",
            Command::Bench => "bench",
        }
    }
}

/// Worker threads from `SONIC_THREADS`, if set.
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("SONIC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("SONIC_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    // benchmarks are defined single-threaded
    let threads = if cli.command == Command::Bench { Some(1) } else { thread_cap()? };
    if let Some(n) = threads {
        sonic_core::exec::init_thread_pool(n);
    }
    let cfg = RunConfig::resolve(&cli.flags)?;
    let out = cli.flags.out.clone().unwrap_or_else(|| Path::new("runs").join(cli.command.name()));
    let model = cli.flags.model.as_deref();
    match cli.command {
        Command::Gen => commands::gen(&cfg, &out),
        Command::Train => commands::train(&cfg, &out),
        Command::Eval => commands::eval(&cfg, &cli.flags, model, cli.flags.out.as_deref()),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Verify => commands::verify(),
        Command::Resample => commands::resample(&cfg, model, &out),
        Command::ExportSpectrum => commands::export_spectrum(&cfg, model, &out),
        Command::Bench => commands::bench(&cfg, &out),
    }
}

fn main() -> ExitCode {
    if std::env::args_os().len() <= 1 {
        let _ = Cli::command().print_help();
        return ExitCode::from(1);
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
