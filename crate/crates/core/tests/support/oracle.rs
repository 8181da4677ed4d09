//! Reference computations kept independent of the library's code paths.

#![allow(dead_code)]

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `ln C(n, k)` as a compensated sum of `ln((n - k + i) / i)`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    compensated_sum((1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()))
}

/// Binomial mass at `k` for `n` trials with success probability
/// `1 - exp(-rate_time)`, by direct term-by-term evaluation.
pub fn binomial_pmf(n: u64, rate_time: f64, k: u64) -> f64 {
    let p = -(-rate_time).exp_m1();
    let ln = compensated_sum([
        ln_choose(n, k),
        k as f64 * p.ln(),
        -((n - k) as f64) * rate_time,
    ]);
    ln.exp()
}

/// Relative comparison that tolerates values below the normal range, where
/// f64 cannot carry 1e-12 relative precision.
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + f64::MIN_POSITIVE
}

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}
