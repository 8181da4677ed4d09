//! Idle-timeout tuning for pooled directory (LDAP) connections.
//!
//! A proxy keeps a pool of connections to a directory server, and the server
//! drops any connection idle longer than its `nsslapd-idletimeout`. This crate
//! models how often a pooled connection is found dropped, solves for the
//! timeout that meets a target failure probability, tracks the model
//! parameters from request logs, and simulates the whole setup.
//!
//! - [`model`]: closed-form failure probability and timeout solvers.
//! - [`estimator`]: recursive parameter tracking and publish gating.
//! - [`ingest`]: event-log parsing and windowed aggregation.
//! - [`simulator`]: Monte Carlo oracle, system simulator, log generator.

pub mod estimator;
pub mod ingest;
pub mod model;
mod numeric;
pub mod rng;
pub mod simulator;

pub use estimator::{
    EstimatorError, EstimatorState, IterationRecord, Publication, Publisher, StepSchedule, TunerConfig,
    TunerReport, WindowStats,
};
pub use ingest::{Event, EventKind, IngestError};
pub use model::{
    Expression, ModelError, ModelParams, SolverMode, SolverPolicy, TimeoutSolution,
    DEFAULT_LARGE_N_THRESHOLD,
};
pub use simulator::{SimError, SimResult, SystemConfig, SystemReport};
