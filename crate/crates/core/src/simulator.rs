//! Monte Carlo and discrete-event simulation.
//!
//! Three independent views of the failure phenomenon:
//!
//! - [`simulate_failure_prob`] samples the per-user Bernoulli model behind
//!   the closed form directly and serves as its oracle.
//! - [`simulate_system`] replays proxy mechanics: users emit Poisson request
//!   streams, requests are dispatched to child processes that each hold one
//!   pooled directory connection, marked requests use that connection and
//!   fail if it sat idle longer than the directory's idle timeout, and a
//!   child respawns (re-establishing its connection) after `process_life`
//!   requests.
//! - [`generate_event_log`] produces synthetic logs with known parameters
//!   for the ingest and estimator path.
//!
//! All randomness comes from [`crate::rng::substream`], so every result is a
//! pure function of its inputs and seed.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Event, EventKind};
use crate::model::ModelParams;
use crate::rng::{substream, AUX_STREAM_BASE};

/// Trials per RNG substream in [`simulate_failure_prob`].
const TRIAL_BLOCK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub trials: u64,
    pub failures: u64,
    pub p_hat: f64,
    pub std_err: f64,
    pub seed: u64,
}

impl SimResult {
    fn new(trials: u64, failures: u64, seed: u64) -> Self {
        let p_hat = failures as f64 / trials as f64;
        Self {
            trials,
            failures,
            p_hat,
            std_err: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
            seed,
        }
    }
}

/// Estimates the probability that no marked request arrives within
/// `timeout_s` by sampling every user of every trial.
pub fn simulate_failure_prob(
    params: &ModelParams,
    timeout_s: f64,
    trials: u64,
    seed: u64,
) -> Result<SimResult, SimError> {
    if trials == 0 {
        return Err(SimError::InvalidConfig("trials must be at least 1".into()));
    }
    if timeout_s.is_nan() || timeout_s < 0.0 {
        return Err(SimError::InvalidConfig(format!(
            "timeout must be >= 0, got {timeout_s}"
        )));
    }
    let p_request = -(-params.beta() * timeout_s).exp_m1();
    let xi = params.xi();
    let n_users = params.n_users();
    let blocks = trials.div_ceil(TRIAL_BLOCK);

    let failures: u64 = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = substream(seed, block);
            let start = block * TRIAL_BLOCK;
            let len = TRIAL_BLOCK.min(trials - start);
            let mut failed = 0;
            for _ in 0..len {
                let mut any_marked = false;
                for _ in 0..n_users {
                    if rng.gen::<f64>() < p_request && rng.gen::<f64>() < xi {
                        any_marked = true;
                        break;
                    }
                }
                failed += u64::from(!any_marked);
            }
            failed
        })
        .sum();

    Ok(SimResult::new(trials, failures, seed))
}

/// One generated request, before its user id is dropped.
#[derive(Debug, Clone, Copy)]
struct Arrival {
    ts: f64,
    user: u64,
    marked: bool,
}

fn user_arrivals(params: &ModelParams, duration_s: f64, seed: u64, user: u64) -> Vec<Arrival> {
    let mut rng = substream(seed, user);
    let gaps = Exp::new(params.beta()).expect("beta validated positive");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t >= duration_s {
            return out;
        }
        out.push(Arrival {
            ts: t,
            user,
            marked: rng.gen::<f64>() < params.xi(),
        });
    }
}

fn merged_arrivals(params: &ModelParams, duration_s: f64, seed: u64) -> Vec<Arrival> {
    let mut all: Vec<Arrival> = (0..params.n_users())
        .into_par_iter()
        .flat_map_iter(|user| user_arrivals(params, duration_s, seed, user))
        .collect();
    all.sort_by(|a, b| a.ts.total_cmp(&b.ts).then(a.user.cmp(&b.user)));
    all
}

/// Merged, time-sorted event log of `N` independent Poisson request streams
/// at rate `beta` over `[0, duration_s)`; each request is a `bind` with
/// probability `xi`.
pub fn generate_event_log(params: &ModelParams, duration_s: f64, seed: u64) -> Result<Vec<Event>, SimError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    Ok(merged_arrivals(params, duration_s, seed)
        .into_iter()
        .map(|a| Event {
            ts: a.ts,
            kind: if a.marked { EventKind::Bind } else { EventKind::Request },
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_users: u64,
    pub beta: f64,
    pub xi: f64,
    pub n_processes: u64,
    /// Requests served before a child respawns; 0 means never.
    pub process_life: u64,
    /// Directory idle timeout; 0 means connections are never dropped.
    pub idle_timeout_s: f64,
    pub duration_s: f64,
}

impl SystemConfig {
    pub fn model_params(&self) -> Result<ModelParams, SimError> {
        ModelParams::new(self.n_users, self.beta, self.xi).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.model_params()?;
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n_processes == 0 {
            return bad("n_processes must be at least 1".into());
        }
        if !(self.idle_timeout_s.is_finite() && self.idle_timeout_s >= 0.0) {
            return bad(format!("idle timeout must be >= 0, got {}", self.idle_timeout_s));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        Ok(())
    }
}

/// Idle gaps observed by marked requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub count: u64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl GapSummary {
    fn from_gaps(mut gaps: Vec<f64>) -> Option<Self> {
        if gaps.is_empty() {
            return None;
        }
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len();
        let median = if n % 2 == 1 {
            gaps[n / 2]
        } else {
            0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
        };
        Some(Self {
            count: n as u64,
            min: gaps[0],
            median,
            max: gaps[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub seed: u64,
    pub total_requests: u64,
    pub marked_requests: u64,
    pub failed_binds: u64,
    /// `failed_binds / marked_requests`, 0 when nothing was marked.
    pub failure_rate: f64,
    pub no_marked: bool,
    pub respawns: u64,
    pub idle_gap: Option<GapSummary>,
}

#[derive(Debug, Clone, Copy)]
struct ChildProcess {
    /// When the connection was last used or (re)established.
    last_use: f64,
    served: u64,
}

/// Event-driven replay of pooled connections against an idle-timeout policy.
///
/// Each process's connection is established at `t = 0`. A marked request on
/// a connection idle for longer than the timeout is a failed bind; either way
/// the connection ends up freshly used. The `process_life`-th request served
/// by a process respawns it, which also re-establishes the connection.
pub fn simulate_system(config: &SystemConfig, seed: u64) -> Result<SystemReport, SimError> {
    config.validate()?;
    let params = config.model_params()?;
    let arrivals = merged_arrivals(&params, config.duration_s, seed);
    let mut dispatch = substream(seed, AUX_STREAM_BASE);

    let mut pool = vec![
        ChildProcess {
            last_use: 0.0,
            served: 0
        };
        config.n_processes as usize
    ];
    let drops = config.idle_timeout_s > 0.0;
    let mut marked = 0u64;
    let mut failed = 0u64;
    let mut respawns = 0u64;
    let mut gaps = Vec::new();

    for arrival in &arrivals {
        let child = &mut pool[dispatch.gen_range(0..config.n_processes) as usize];
        child.served += 1;
        if arrival.marked {
            marked += 1;
            let gap = arrival.ts - child.last_use;
            gaps.push(gap);
            if drops && gap > config.idle_timeout_s {
                failed += 1;
            }
            child.last_use = arrival.ts;
        }
        if config.process_life > 0 && child.served >= config.process_life {
            respawns += 1;
            child.served = 0;
            child.last_use = arrival.ts;
        }
    }

    Ok(SystemReport {
        seed,
        total_requests: arrivals.len() as u64,
        marked_requests: marked,
        failed_binds: failed,
        failure_rate: if marked == 0 {
            0.0
        } else {
            failed as f64 / marked as f64
        },
        no_marked: marked == 0,
        respawns,
        idle_gap: GapSummary::from_gaps(gaps),
    })
}
