//! `idletune` command-line entry point.
//!
//! Machine-readable output is JSON lines on stdout; human summaries and
//! diagnostics go to stderr. See [`error::exit`] for exit codes.

mod args;
mod commands;
mod error;
mod sink;

use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use args::{Cli, Command, FileConfig};
use error::{exit, CliError};

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a, &file, &mut out),
        Command::Prob(a) => commands::prob(a, &file, &mut out),
        Command::Bound(a) => commands::bound(a, &file, &mut out),
        Command::Simulate(a) => commands::simulate(a, &file, &mut out),
        Command::SimSystem(a) => commands::sim_system(a, &file, &mut out),
        Command::GenLog(a) => commands::gen_log(a, &file, &mut out),
        Command::Tune(a) => commands::tune(a, &file, &mut out),
    };
    out.flush()?;
    result
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("error")))
        .with_writer(io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK } as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("idletune: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
