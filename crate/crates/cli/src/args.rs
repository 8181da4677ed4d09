//! Command-line flags and the optional TOML config file.
//!
//! Every flag is optional at parse time; values are resolved as
//! flag > config file > built-in default. The seed additionally falls back
//! to `IDLETUNE_SEED` before the built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use idletune_core::rng::{DEFAULT_SEED, SEED_ENV_VAR};
use idletune_core::{SolverMode, SolverPolicy, StepSchedule, DEFAULT_LARGE_N_THRESHOLD};

use crate::error::CliError;
use crate::sink::SinkSpec;

/// Default target failure probability.
pub const DEFAULT_EPS: f64 = 0.1;
/// Default publish threshold, seconds.
pub const DEFAULT_DELTA_S: f64 = 5.0;
/// Default averaging window, seconds (20 minutes).
pub const DEFAULT_WINDOW_S: f64 = 1200.0;
pub const DEFAULT_TRIALS: u64 = 100_000;

#[derive(Debug, Parser)]
#[command(name = "idletune", version, about = "Directory idle-timeout modeling and tuning")]
pub struct Cli {
    /// TOML file supplying defaults for any flag (keys use the flag names).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the idle timeout that meets a target failure probability.
    Solve(SolveArgs),
    /// Failure probability for a given idle timeout.
    Prob(ProbArgs),
    /// Smallest achievable failure probability, (1 - xi)^N.
    Bound(BoundArgs),
    /// Monte Carlo estimate of the failure probability.
    Simulate(SimulateArgs),
    /// Discrete-event simulation of the proxy connection pool.
    SimSystem(SimSystemArgs),
    /// Write a synthetic event log.
    GenLog(GenLogArgs),
    /// Track parameters from an event log and publish timeout updates.
    Tune(TuneArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    Auto,
    Exact,
    LargeN,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// Number of proxy users, N.
    #[arg(long)]
    pub users: Option<u64>,
    /// Per-user request rate, requests per second.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Probability that a request reaches the directory server.
    #[arg(long)]
    pub xi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PolicyFlags {
    /// Which timeout expression to use.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Populations above this use the large-N approximation under `auto`.
    #[arg(long)]
    pub large_n_threshold: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Target failure probability.
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub policy: PolicyFlags,
}

#[derive(Debug, Args)]
pub struct ProbArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Idle timeout, seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Number of proxy users, N.
    #[arg(long)]
    pub users: Option<u64>,
    /// Probability that a request reaches the directory server.
    #[arg(long)]
    pub xi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Idle timeout, seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Number of Monte Carlo trials.
    #[arg(long)]
    pub trials: Option<u64>,
    /// RNG seed; falls back to IDLETUNE_SEED, then a fixed default.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimSystemArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Child processes, each holding one pooled connection.
    #[arg(long)]
    pub processes: Option<u64>,
    /// Requests served before a child respawns; 0 disables respawning.
    #[arg(long)]
    pub process_life: Option<u64>,
    /// Directory idle timeout, seconds; 0 means never drop.
    #[arg(long)]
    pub idle_timeout: Option<f64>,
    /// Simulated time, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// RNG seed; falls back to IDLETUNE_SEED, then a fixed default.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenLogArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Length of the generated log, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// RNG seed; falls back to IDLETUNE_SEED, then a fixed default.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Event log; standard input when absent or `-`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of proxy users, N.
    #[arg(long)]
    pub users: Option<u64>,
    /// Averaging window T, seconds.
    #[arg(long)]
    pub window: Option<f64>,
    /// Target failure probability.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Minimum timeout change, seconds, that triggers a publish.
    #[arg(long)]
    pub delta: Option<f64>,
    /// `harmonic`, `power:<a>` or `constant:<c>`.
    #[arg(long)]
    pub schedule: Option<String>,
    #[command(flatten)]
    pub policy: PolicyFlags,
    /// `stdout`, `file:<path>`, `ldif:<path>` or `webhook:<url>`.
    #[arg(long)]
    pub sink: Option<String>,
}

/// Config file contents; every key mirrors a flag.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub users: Option<u64>,
    pub beta: Option<f64>,
    pub xi: Option<f64>,
    pub eps: Option<f64>,
    pub timeout: Option<f64>,
    pub policy: Option<PolicyArg>,
    pub large_n_threshold: Option<u64>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub processes: Option<u64>,
    pub process_life: Option<u64>,
    pub idle_timeout: Option<f64>,
    pub duration: Option<f64>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub window: Option<f64>,
    pub delta: Option<f64>,
    pub schedule: Option<String>,
    pub sink: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::Usage(format!("missing required value --{name}")))
}

pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = flag.or(file) {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

pub fn resolve_policy(flags: &PolicyFlags, file: &FileConfig) -> SolverPolicy {
    let mode = match flags.policy.or(file.policy).unwrap_or(PolicyArg::Auto) {
        PolicyArg::Auto => SolverMode::Auto,
        PolicyArg::Exact => SolverMode::ForceExact,
        PolicyArg::LargeN => SolverMode::ForceLargeN,
    };
    SolverPolicy {
        large_n_threshold: flags
            .large_n_threshold
            .or(file.large_n_threshold)
            .unwrap_or(DEFAULT_LARGE_N_THRESHOLD),
        mode,
    }
}

pub fn resolve_schedule(flag: Option<&str>, file: Option<&str>) -> Result<StepSchedule, CliError> {
    match flag.or(file) {
        None => Ok(StepSchedule::Harmonic),
        Some(s) => s.parse().map_err(|e| CliError::Usage(format!("--schedule: {e}"))),
    }
}

pub fn resolve_sink(flag: Option<&str>, file: Option<&str>) -> Result<SinkSpec, CliError> {
    match flag.or(file) {
        None => Ok(SinkSpec::Stdout),
        Some(s) => s.parse(),
    }
}
