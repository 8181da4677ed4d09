//! Closed-form failure model for idle-dropped pooled connections.
//!
//! A population of `N` users is observed over an idle window of length `t`.
//! Each user issues a request within the window with probability
//! `1 - exp(-beta t)`, so the number of observed requests after `t` seconds is
//! binomial; the chain that produces it is a pure-birth process with rate
//! `(N - k) beta` out of state `k`.
//!
//! A request is *marked* with probability `xi` when it actually reaches the
//! directory server. A connection fails when no marked request arrives during
//! the idle timeout, which has probability
//!
//! ```text
//! P(E) = (1 - xi (1 - exp(-beta t)))^N
//! ```
//!
//! and the infimum over all timeouts is `(1 - xi)^N`. Inverting `P(E) = eps`
//! for `t` gives the recommended idle timeout; for large populations the
//! first-order expansion `-ln(eps) / (N beta xi)` is used instead.
//!
//! Every quantity raised to the power `N` is evaluated in the log domain.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::numeric::ln_binomial_pmf;

/// Population threshold above which the large-population approximation is
/// used by default.
pub const DEFAULT_LARGE_N_THRESHOLD: u64 = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The requested failure probability cannot be reached for these
    /// parameters. `bound` is `(1 - xi)^N`, the smallest achievable value.
    #[error("infeasible target: eps={eps:e} must exceed the bound (1-xi)^N={bound:e} (xi={xi}, N={n_users})")]
    Infeasible {
        eps: f64,
        bound: f64,
        xi: f64,
        n_users: u64,
    },
}

/// The `(N, beta, xi)` triple every formula is driven by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    n_users: u64,
    beta: f64,
    xi: f64,
}

#[derive(Deserialize)]
struct RawParams {
    n_users: u64,
    beta: f64,
    xi: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = ModelError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        ModelParams::new(raw.n_users, raw.beta, raw.xi)
    }
}

impl ModelParams {
    pub fn new(n_users: u64, beta: f64, xi: f64) -> Result<Self, ModelError> {
        if n_users == 0 {
            return Err(ModelError::InvalidParams("n_users must be at least 1".into()));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        if !(0.0..=1.0).contains(&xi) {
            return Err(ModelError::InvalidParams(format!(
                "xi must lie in [0, 1], got {xi}"
            )));
        }
        Ok(Self { n_users, beta, xi })
    }

    /// Population size `N`.
    pub fn n_users(&self) -> u64 {
        self.n_users
    }

    /// Per-user request rate, requests per second.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Probability that a request is marked.
    pub fn xi(&self) -> f64 {
        self.xi
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} beta={} xi={}", self.n_users, self.beta, self.xi)
    }
}

/// Which inversion produced a timeout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expression {
    Exact,
    LargeN,
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Exact => f.write_str("Exact"),
            Expression::LargeN => f.write_str("LargeN"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    /// Exact for `N <= large_n_threshold`, large-population otherwise.
    #[default]
    Auto,
    ForceExact,
    ForceLargeN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverPolicy {
    pub large_n_threshold: u64,
    pub mode: SolverMode,
}

impl Default for SolverPolicy {
    fn default() -> Self {
        Self {
            large_n_threshold: DEFAULT_LARGE_N_THRESHOLD,
            mode: SolverMode::Auto,
        }
    }
}

impl SolverPolicy {
    pub fn forced(expression: Expression) -> Self {
        let mode = match expression {
            Expression::Exact => SolverMode::ForceExact,
            Expression::LargeN => SolverMode::ForceLargeN,
        };
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn select(&self, n_users: u64) -> Expression {
        match self.mode {
            SolverMode::ForceExact => Expression::Exact,
            SolverMode::ForceLargeN => Expression::LargeN,
            SolverMode::Auto if n_users > self.large_n_threshold => Expression::LargeN,
            SolverMode::Auto => Expression::Exact,
        }
    }
}

/// A solved idle timeout together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeoutSolution {
    pub timeout_s: f64,
    pub target_eps: f64,
    pub expression: Expression,
    pub feasibility_bound: f64,
}

/// Birth rate `(N - k) beta` out of state `k` of the observation chain.
pub fn birth_rate(params: &ModelParams, k: u64) -> Result<f64, ModelError> {
    if k > params.n_users {
        return Err(ModelError::Domain(format!(
            "state {k} outside chain 0..={}",
            params.n_users
        )));
    }
    Ok((params.n_users - k) as f64 * params.beta)
}

fn check_time(t: f64, what: &str) -> Result<(), ModelError> {
    if t.is_nan() || t < 0.0 {
        return Err(ModelError::Domain(format!("{what} must be >= 0, got {t}")));
    }
    Ok(())
}

/// Natural log of [`state_probability`]; finite or `-inf`.
pub fn ln_state_probability(params: &ModelParams, k: u64, t: f64) -> Result<f64, ModelError> {
    check_time(t, "t")?;
    if k > params.n_users {
        return Err(ModelError::Domain(format!(
            "state {k} outside chain 0..={}",
            params.n_users
        )));
    }
    let x = params.beta * t;
    let q = (-x).exp();
    let p = -(-x).exp_m1();
    Ok(ln_binomial_pmf(k, params.n_users, p, q, -x))
}

/// Probability of having observed `k` requests after `t` seconds:
/// `C(N,k) exp(-(N-k) beta t) (1 - exp(-beta t))^k`.
pub fn state_probability(params: &ModelParams, k: u64, t: f64) -> Result<f64, ModelError> {
    ln_state_probability(params, k, t).map(f64::exp)
}

/// `ln(1 - xi (1 - exp(-beta t)))`, choosing the form that avoids cancellation.
fn ln_no_mark_per_user(params: &ModelParams, t: f64) -> f64 {
    let x = params.beta * t;
    let fired = -(-x).exp_m1();
    let marked = params.xi * fired;
    if marked < 0.5 {
        (-marked).ln_1p()
    } else {
        ((1.0 - params.xi) + params.xi * (-x).exp()).ln()
    }
}

/// Probability that no marked request arrives within `timeout_s`:
/// `(1 - xi (1 - exp(-beta t)))^N`.
pub fn failure_probability(params: &ModelParams, timeout_s: f64) -> Result<f64, ModelError> {
    check_time(timeout_s, "timeout_s")?;
    if timeout_s == 0.0 || params.xi == 0.0 {
        return Ok(1.0);
    }
    let ln_p = params.n_users as f64 * ln_no_mark_per_user(params, timeout_s);
    Ok(ln_p.exp())
}

/// `(1 - xi)^N`, the infimum of achievable failure probabilities.
pub fn feasibility_bound(params: &ModelParams) -> f64 {
    if params.xi == 1.0 {
        return 0.0;
    }
    (params.n_users as f64 * (-params.xi).ln_1p()).exp()
}

fn check_eps(eps: f64) -> Result<(), ModelError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(ModelError::Domain(format!(
            "target probability must lie in (0, 1], got {eps}"
        )));
    }
    Ok(())
}

fn infeasible(params: &ModelParams, eps: f64, bound: f64) -> ModelError {
    ModelError::Infeasible {
        eps,
        bound,
        xi: params.xi,
        n_users: params.n_users,
    }
}

/// Exact inversion of the failure probability:
/// `t = -(1/beta) ln(1 - (1 - eps^(1/N)) / xi)`.
pub fn solve_timeout_exact(params: &ModelParams, eps: f64) -> Result<f64, ModelError> {
    check_eps(eps)?;
    let bound = feasibility_bound(params);
    if params.xi == 0.0 || eps <= bound {
        return Err(infeasible(params, eps, bound));
    }
    // 1 - eps^(1/N)
    let per_user = -(eps.ln() / params.n_users as f64).exp_m1();
    let ratio = per_user / params.xi;
    if ratio >= 1.0 {
        // Only reachable through rounding within an ulp of the bound.
        return Err(infeasible(params, eps, bound));
    }
    Ok(-(-ratio).ln_1p() / params.beta)
}

/// Large-population approximation `t = -ln(eps) / (N beta xi)`.
pub fn solve_timeout_large_n(params: &ModelParams, eps: f64) -> Result<f64, ModelError> {
    check_eps(eps)?;
    if params.xi == 0.0 {
        return Err(infeasible(params, eps, feasibility_bound(params)));
    }
    let t = -eps.ln() / (params.beta * params.xi * params.n_users as f64);
    // -ln(1) is -0.0
    Ok(t.abs())
}

/// Solves for the idle timeout using the expression picked by `policy`.
///
/// The target must satisfy `0 < eps < 1` and exceed the feasibility bound
/// whichever expression is used.
pub fn solve_timeout(
    params: &ModelParams,
    eps: f64,
    policy: &SolverPolicy,
) -> Result<TimeoutSolution, ModelError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::Domain(format!(
            "target probability must lie in (0, 1), got {eps}"
        )));
    }
    let bound = feasibility_bound(params);
    if params.xi == 0.0 || eps <= bound {
        return Err(infeasible(params, eps, bound));
    }
    let expression = policy.select(params.n_users);
    let timeout_s = match expression {
        Expression::Exact => solve_timeout_exact(params, eps)?,
        Expression::LargeN => solve_timeout_large_n(params, eps)?,
    };
    if !(timeout_s.is_finite() && timeout_s > 0.0) {
        return Err(ModelError::Domain(format!(
            "solver produced a non-positive timeout {timeout_s} for {params}"
        )));
    }
    Ok(TimeoutSolution {
        timeout_s,
        target_eps: eps,
        expression,
        feasibility_bound: bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u64, beta: f64, xi: f64) -> ModelParams {
        ModelParams::new(n, beta, xi).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(ModelParams::new(0, 0.1, 0.5).is_err());
        assert!(ModelParams::new(1, 0.0, 0.5).is_err());
        assert!(ModelParams::new(1, f64::INFINITY, 0.5).is_err());
        assert!(ModelParams::new(1, 0.1, 1.01).is_err());
        assert!(ModelParams::new(1, 0.1, f64::NAN).is_err());
        assert!(ModelParams::new(1, 0.1, 0.0).is_ok());
        assert!(ModelParams::new(1, 0.1, 1.0).is_ok());
    }

    #[test]
    fn params_deserialize_validates() {
        let ok: ModelParams =
            serde_json::from_str(r#"{"n_users":3,"beta":0.5,"xi":0.2}"#).unwrap();
        assert_eq!(ok, params(3, 0.5, 0.2));
        assert!(serde_json::from_str::<ModelParams>(r#"{"n_users":0,"beta":0.5,"xi":0.2}"#).is_err());
    }

    #[test]
    fn birth_rates() {
        let p = params(800, 8.3e-4, 0.5);
        assert_eq!(birth_rate(&p, 800).unwrap(), 0.0);
        assert!(rel(birth_rate(&p, 0).unwrap(), 0.664) < 1e-12);
        let p = params(150, 1.39e-3, 0.5);
        assert!(rel(birth_rate(&p, 50).unwrap(), 0.139) < 1e-12);
        assert!(matches!(birth_rate(&p, 151), Err(ModelError::Domain(_))));
    }

    #[test]
    fn state_probability_initial_condition() {
        let p = params(25, 0.3, 0.5);
        assert_eq!(state_probability(&p, 0, 0.0).unwrap(), 1.0);
        assert_eq!(state_probability(&p, 1, 0.0).unwrap(), 0.0);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn state_probability_matches_frozen_pmf() {
        // C(20,7) p^7 (1-p)^13 with p = 1 - e^-0.5, evaluated at 40 digits.
        let expected = 0.170_167_223_051_291_468;
        let got = state_probability(&params(20, 0.01, 0.3), 7, 50.0).unwrap();
        assert!(rel(got, expected) < 1e-13, "{got}");
    }

    #[test]
    fn state_probability_domain_errors() {
        let p = params(10, 0.1, 0.5);
        assert!(state_probability(&p, 11, 1.0).is_err());
        assert!(state_probability(&p, 1, -1.0).is_err());
    }

    #[test]
    fn state_probability_normalizes_for_large_population() {
        let p = params(100_000, 1e-4, 0.5);
        let total: f64 = (0..=100_000)
            .map(|k| state_probability(&p, k, 3.0).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn failure_probability_trivial_cases() {
        let p = params(40, 0.02, 0.7);
        assert_eq!(failure_probability(&p, 0.0).unwrap(), 1.0);
        assert_eq!(failure_probability(&params(40, 0.02, 0.0), 1e4).unwrap(), 1.0);
        assert!(failure_probability(&p, -1.0).is_err());
    }

    #[test]
    fn failure_probability_hand_checked() {
        let expected = (1.0 - 0.3 * (1.0 - (-0.5_f64).exp())).powi(20);
        let got = failure_probability(&params(20, 0.01, 0.3), 50.0).unwrap();
        assert!(rel(got, expected) < 1e-13);
        assert!((got - 0.0811).abs() < 1e-4);
    }

    #[test]
    fn failure_probability_row_two_round_trip() {
        let got = failure_probability(&params(150, 1.39e-3, 0.1338), 87.03).unwrap();
        assert!((got - 0.1).abs() <= 0.005, "{got}");
    }

    #[test]
    fn failure_probability_full_marking_decays() {
        let got = failure_probability(&params(1, 1.0, 1.0), 50.0).unwrap();
        assert!(got < 1e-6);
        assert!(rel(got, (-50.0_f64).exp()) < 1e-12);
    }

    #[test]
    fn feasibility_bound_values() {
        assert_eq!(feasibility_bound(&params(7, 0.1, 1.0)), 0.0);
        assert_eq!(feasibility_bound(&params(7, 0.1, 0.0)), 1.0);
        // exp(150 ln 0.8662), 40-digit reference
        let expected = 4.392_653_119_155_901_6e-10;
        assert!(rel(feasibility_bound(&params(150, 1.39e-3, 0.1338)), expected) < 1e-12);
    }

    #[test]
    fn exact_solver_table_rows() {
        let row2 = solve_timeout_exact(&params(150, 1.39e-3, 0.1338), 0.1).unwrap();
        assert!(rel(row2, 87.03) < 0.01, "{row2}");
        let row1 = solve_timeout_exact(&params(800, 8.3e-4, 0.3947), 0.1).unwrap();
        assert!(rel(row1, 8.75) < 0.01, "{row1}");
    }

    #[test]
    fn exact_solver_infeasible_below_bound() {
        let p = params(150, 1.39e-3, 0.1338);
        match solve_timeout_exact(&p, 1e-12) {
            Err(ModelError::Infeasible { bound, .. }) => assert!(rel(bound, 4.3927e-10) < 1e-4),
            other => panic!("expected infeasible, got {other:?}"),
        }
        assert!(matches!(
            solve_timeout_exact(&params(150, 1.39e-3, 0.0), 0.1),
            Err(ModelError::Infeasible { .. })
        ));
        let bound = feasibility_bound(&p);
        assert!(solve_timeout_exact(&p, bound).is_err());
    }

    #[test]
    fn exact_solver_full_marking_closed_form() {
        let p = params(30, 0.2, 1.0);
        let eps: f64 = 0.05;
        let expected = -eps.ln() / (0.2 * 30.0);
        assert!(rel(solve_timeout_exact(&p, eps).unwrap(), expected) < 1e-12);
    }

    #[test]
    fn large_n_solver() {
        let row3 = solve_timeout_large_n(&params(10_000, 0.06, 0.5887), 0.1).unwrap();
        assert!(rel(row3, 0.0065) < 0.03, "{row3}");
        let row1 = solve_timeout_large_n(&params(800, 8.3e-4, 0.3947), 0.1).unwrap();
        assert!(rel(row1, 8.75) < 0.01, "{row1}");
        assert_eq!(solve_timeout_large_n(&params(10, 0.1, 0.5), 1.0).unwrap(), 0.0);
        assert!(solve_timeout_large_n(&params(10, 0.1, 0.0), 0.1).is_err());
    }

    #[test]
    fn policy_dispatch() {
        let policy = SolverPolicy::default();
        let s = solve_timeout(&params(150, 1.39e-3, 0.1338), 0.1, &policy).unwrap();
        assert_eq!(s.expression, Expression::Exact);
        assert!(rel(s.timeout_s, 87.03) < 0.01);
        assert!(s.target_eps > s.feasibility_bound);

        let big = params(10_000, 0.06, 0.5887);
        let s = solve_timeout(&big, 0.1, &policy).unwrap();
        assert_eq!(s.expression, Expression::LargeN);
        assert!(rel(s.timeout_s, 0.0065) < 0.03);

        let exact = solve_timeout(&big, 0.1, &SolverPolicy::forced(Expression::Exact)).unwrap();
        assert_eq!(exact.expression, Expression::Exact);
        assert!(rel(exact.timeout_s, s.timeout_s) < 0.01);
    }

    #[test]
    fn policy_threshold_is_inclusive_for_exact() {
        let policy = SolverPolicy::default();
        assert_eq!(policy.select(500), Expression::Exact);
        assert_eq!(policy.select(501), Expression::LargeN);
        let custom = SolverPolicy {
            large_n_threshold: 10,
            mode: SolverMode::Auto,
        };
        assert_eq!(custom.select(11), Expression::LargeN);
    }

    #[test]
    fn solve_timeout_rejects_degenerate_targets() {
        let p = params(10, 0.1, 0.5);
        let policy = SolverPolicy::default();
        assert!(matches!(solve_timeout(&p, 1.0, &policy), Err(ModelError::Domain(_))));
        assert!(matches!(solve_timeout(&p, 0.0, &policy), Err(ModelError::Domain(_))));
        assert!(matches!(
            solve_timeout(&p, 1e-4, &policy),
            Err(ModelError::Infeasible { .. })
        ));
    }
}
