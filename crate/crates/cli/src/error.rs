use thiserror::Error;

use idletune_core::{EstimatorError, IngestError, ModelError, SimError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const INPUT: i32 = 4;
    pub const SINK: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("infeasible target: eps={eps:e} must exceed the feasibility bound {bound:e}")]
    Infeasible { eps: f64, bound: f64 },

    #[error("input error: {0}")]
    Input(String),

    #[error("{failed} publish(es) failed")]
    Sink { failed: u64 },

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Infeasible { .. } => exit::INFEASIBLE,
            CliError::Input(_) => exit::INPUT,
            CliError::Sink { .. } => exit::SINK,
            CliError::Runtime(_) => exit::RUNTIME,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Infeasible { eps, bound, .. } => CliError::Infeasible { eps, bound },
            ModelError::InvalidParams(m) | ModelError::Domain(m) => CliError::Usage(m),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidArgs(m) => CliError::Usage(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::InvalidConfig(m) => CliError::Usage(m),
            EstimatorError::CannotInitialize(_) => CliError::Input(e.to_string()),
            EstimatorError::Recommendation { source, .. } => source.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
