//! Recursive stochastic-approximation tracking of `(xi, beta)`.
//!
//! Each averaging window yields an empirical marked fraction `chi` and a
//! per-user rate `theta`. The estimates move toward each observation by a
//! step `eta_n`:
//!
//! ```text
//! xi_{n+1}   = xi_n   + eta_n (chi_{n+1}   - xi_n)
//! beta_{n+1} = beta_n + eta_n (theta_{n+1} - beta_n)
//! ```
//!
//! With the harmonic schedule `eta_n = 1/(n+1)` this is the running mean of
//! the observations. After each step the idle timeout is re-solved and pushed
//! to a [`Publisher`] when it moved by at least `publish_delta_s`.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::model::{self, ModelError, ModelParams, SolverPolicy, TimeoutSolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("cannot initialize estimator: {0}")]
    CannotInitialize(String),

    #[error("invalid tuner configuration: {0}")]
    InvalidConfig(String),

    #[error("no recommendation at xi_hat={xi_hat}, beta_hat={beta_hat}: {source}")]
    Recommendation {
        xi_hat: f64,
        beta_hat: f64,
        #[source]
        source: ModelError,
    },
}

/// Step-size sequence `eta_n`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `1 / (n + 1)`.
    #[default]
    Harmonic,
    /// `(n + 1)^(-a)` with `a` in (0.5, 1].
    Power { a: f64 },
    /// Fixed `c` in (0, 1]. Does not decay, so estimates keep tracking
    /// nonstationary traffic instead of converging.
    Constant { c: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        match *self {
            StepSchedule::Harmonic => Ok(()),
            StepSchedule::Power { a } if a > 0.5 && a <= 1.0 => Ok(()),
            StepSchedule::Power { a } => Err(EstimatorError::InvalidConfig(format!(
                "power schedule exponent must be in (0.5, 1], got {a}"
            ))),
            StepSchedule::Constant { c } if c > 0.0 && c <= 1.0 => Ok(()),
            StepSchedule::Constant { c } => Err(EstimatorError::InvalidConfig(format!(
                "constant step must be in (0, 1], got {c}"
            ))),
        }
    }

    /// True when the schedule meets the decay condition `eta_n -> 0`.
    pub fn is_decaying(&self) -> bool {
        !matches!(self, StepSchedule::Constant { .. })
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Harmonic => f.write_str("harmonic"),
            StepSchedule::Power { a } => write!(f, "power:{a}"),
            StepSchedule::Constant { c } => write!(f, "constant:{c}"),
        }
    }
}

impl std::str::FromStr for StepSchedule {
    type Err = EstimatorError;

    /// Parses `harmonic`, `power:<a>` or `constant:<c>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EstimatorError::InvalidConfig(format!("unrecognized step schedule {s:?}"));
        let schedule = match s.split_once(':') {
            None if s == "harmonic" => StepSchedule::Harmonic,
            Some(("power", a)) => StepSchedule::Power {
                a: a.parse().map_err(|_| bad())?,
            },
            Some(("constant", c)) => StepSchedule::Constant {
                c: c.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

pub fn step_size(schedule: &StepSchedule, n: u64) -> f64 {
    match *schedule {
        StepSchedule::Harmonic => 1.0 / (n as f64 + 1.0),
        StepSchedule::Power { a } => (n as f64 + 1.0).powf(-a),
        StepSchedule::Constant { c } => c,
    }
}

/// Empirical observations over one averaging window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub window_start_ts: f64,
    pub window_s: f64,
    pub n_requests: u64,
    pub n_marked: u64,
    /// `n_marked / n_requests`, 0 for an empty window.
    pub chi: f64,
    /// Requests per second per user, `n_requests / (N T)`.
    pub theta: f64,
    pub zero_traffic: bool,
}

impl WindowStats {
    pub fn window_end_ts(&self) -> f64 {
        self.window_start_ts + self.window_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub iteration: u64,
    pub xi_hat: f64,
    pub beta_hat: f64,
    pub last_published_timeout_s: Option<f64>,
}

/// First estimate, equivalent to one harmonic step from `(0, 0)` with
/// `eta_0 = 1`.
pub fn init_state(first_window: &WindowStats) -> Result<EstimatorState, EstimatorError> {
    if first_window.n_requests == 0 {
        return Err(EstimatorError::CannotInitialize(
            "first window has no traffic".into(),
        ));
    }
    Ok(EstimatorState {
        iteration: 0,
        xi_hat: first_window.chi,
        beta_hat: first_window.theta,
        last_published_timeout_s: None,
    })
}

/// One recursion step using `eta_{iteration + 1}`.
pub fn update(state: &EstimatorState, window: &WindowStats, schedule: &StepSchedule) -> EstimatorState {
    debug_assert!(window.n_requests > 0, "zero-traffic windows are skipped upstream");
    let next = state.iteration + 1;
    let eta = step_size(schedule, next);
    EstimatorState {
        iteration: next,
        xi_hat: (state.xi_hat + eta * (window.chi - state.xi_hat)).clamp(0.0, 1.0),
        beta_hat: (state.beta_hat + eta * (window.theta - state.beta_hat)).max(0.0),
        last_published_timeout_s: state.last_published_timeout_s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub window_s: f64,
    pub target_eps: f64,
    pub n_users: u64,
    pub publish_delta_s: f64,
    pub schedule: StepSchedule,
    pub solver_policy: SolverPolicy,
}

impl TunerConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: String| Err(EstimatorError::InvalidConfig(m));
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return bad(format!("window_s must be positive, got {}", self.window_s));
        }
        if !(self.target_eps > 0.0 && self.target_eps < 1.0) {
            return bad(format!("target_eps must be in (0, 1), got {}", self.target_eps));
        }
        if self.n_users == 0 {
            return bad("n_users must be at least 1".into());
        }
        if self.publish_delta_s.is_nan() || self.publish_delta_s < 0.0 {
            return bad(format!(
                "publish_delta_s must be >= 0, got {}",
                self.publish_delta_s
            ));
        }
        self.schedule.validate()
    }
}

pub fn recommend(state: &EstimatorState, config: &TunerConfig) -> Result<TimeoutSolution, EstimatorError> {
    let annotate = |source: ModelError| EstimatorError::Recommendation {
        xi_hat: state.xi_hat,
        beta_hat: state.beta_hat,
        source,
    };
    if state.xi_hat <= 0.0 {
        return Err(annotate(ModelError::Infeasible {
            eps: config.target_eps,
            bound: 1.0,
            xi: state.xi_hat,
            n_users: config.n_users,
        }));
    }
    let params = ModelParams::new(config.n_users, state.beta_hat, state.xi_hat).map_err(annotate)?;
    model::solve_timeout(&params, config.target_eps, &config.solver_policy).map_err(annotate)
}

/// Publish when nothing has been published yet or the timeout moved by at
/// least `publish_delta_s`.
pub fn should_publish(state: &EstimatorState, new_timeout_s: f64, publish_delta_s: f64) -> bool {
    match state.last_published_timeout_s {
        None => true,
        Some(last) => (new_timeout_s - last).abs() >= publish_delta_s,
    }
}

/// A timeout pushed to a sink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Publication {
    pub iteration: u64,
    pub window_end_ts: f64,
    pub timeout_s: f64,
    pub xi_hat: f64,
    pub beta_hat: f64,
}

/// Destination for published timeouts.
pub trait Publisher {
    fn publish(&mut self, publication: &Publication) -> Result<(), String>;
}

/// Collects publications in memory.
impl Publisher for Vec<Publication> {
    fn publish(&mut self, publication: &Publication) -> Result<(), String> {
        self.push(*publication);
        Ok(())
    }
}

/// One audit line of a tuner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub window_end_ts: f64,
    pub chi: f64,
    pub theta: f64,
    pub xi_hat: f64,
    pub beta_hat: f64,
    /// `None` when no feasible timeout exists for the current estimates.
    pub timeout_s: Option<f64>,
    pub published: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TunerReport {
    pub iterations: Vec<IterationRecord>,
    pub skipped_windows: u64,
    pub publishes: u64,
    pub publish_failures: u64,
}

impl TunerReport {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    /// The report as one JSON object per iteration, newline-terminated.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for record in &self.iterations {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Runs the full tracking loop over a window stream.
///
/// Zero-traffic windows are skipped without advancing the iteration counter.
/// Infeasible recommendations and sink failures are recorded, not fatal.
pub fn run_tuner<I, P>(
    windows: I,
    config: &TunerConfig,
    sink: &mut P,
) -> Result<TunerReport, EstimatorError>
where
    I: IntoIterator<Item = WindowStats>,
    P: Publisher + ?Sized,
{
    config.validate()?;
    let mut report = TunerReport::default();
    let mut state: Option<EstimatorState> = None;

    for window in windows {
        if window.n_requests == 0 {
            debug!(start = window.window_start_ts, "skipping zero-traffic window");
            report.skipped_windows += 1;
            continue;
        }
        let mut current = match state {
            None => init_state(&window)?,
            Some(prev) => update(&prev, &window, &config.schedule),
        };

        let mut record = IterationRecord {
            iteration: current.iteration,
            window_end_ts: window.window_end_ts(),
            chi: window.chi,
            theta: window.theta,
            xi_hat: current.xi_hat,
            beta_hat: current.beta_hat,
            timeout_s: None,
            published: false,
            error: None,
        };

        match recommend(&current, config) {
            Ok(solution) => {
                record.timeout_s = Some(solution.timeout_s);
                if should_publish(&current, solution.timeout_s, config.publish_delta_s) {
                    let publication = Publication {
                        iteration: current.iteration,
                        window_end_ts: record.window_end_ts,
                        timeout_s: solution.timeout_s,
                        xi_hat: current.xi_hat,
                        beta_hat: current.beta_hat,
                    };
                    match sink.publish(&publication) {
                        Ok(()) => {
                            info!(iteration = current.iteration, timeout_s = solution.timeout_s, "published");
                            current.last_published_timeout_s = Some(solution.timeout_s);
                            record.published = true;
                            report.publishes += 1;
                        }
                        Err(e) => {
                            warn!(iteration = current.iteration, error = %e, "publish failed");
                            report.publish_failures += 1;
                            record.error = Some(format!("publish failed: {e}"));
                        }
                    }
                }
            }
            Err(e) => {
                warn!(iteration = current.iteration, error = %e, "no feasible timeout");
                record.error = Some(e.to_string());
            }
        }

        report.iterations.push(record);
        state = Some(current);
    }

    if state.is_none() {
        return Err(EstimatorError::CannotInitialize(
            "window stream contained no traffic".into(),
        ));
    }
    Ok(report)
}
