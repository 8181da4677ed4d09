//! Log-domain primitives for binomial probabilities.
//!
//! The binomial mass function is evaluated with Loader's saddle-point
//! decomposition: Stirling-series remainders plus the deviance term `bd0`.
//! Unlike a `lgamma` difference, this keeps full relative precision when the
//! binomial coefficient itself is astronomically large.

use std::f64::consts::PI;

/// `ln(n!) - [(n + 1/2) ln n - n + ln sqrt(2 pi)]` for n = 0..=15.
/// Entry 0 is never read; the mass function handles the endpoints separately.
#[allow(clippy::excessive_precision)]
const STIRLERR_TABLE: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_22,
    0.041_340_695_955_409_294_09,
    0.027_677_925_684_998_339_15,
    0.020_790_672_103_765_093_11,
    0.016_644_691_189_821_192_16,
    0.013_876_128_823_070_747_99,
    0.011_896_709_945_891_770_10,
    0.010_411_265_261_972_096_50,
    0.009_255_462_182_712_732_918,
    0.008_330_563_433_362_871_256,
    0.007_573_675_487_951_840_795,
    0.006_942_840_107_209_529_866,
    0.006_408_994_188_004_207_068,
    0.005_951_370_112_758_847_736,
    0.005_554_733_551_962_801_371,
];

const S0: f64 = 1.0 / 12.0;
const S1: f64 = 1.0 / 360.0;
const S2: f64 = 1.0 / 1260.0;
const S3: f64 = 1.0 / 1680.0;
const S4: f64 = 1.0 / 1188.0;

/// Error term of Stirling's approximation to `ln(n!)`, for integer `n >= 1`.
pub(crate) fn stirlerr(n: u64) -> f64 {
    if n < STIRLERR_TABLE.len() as u64 {
        return STIRLERR_TABLE[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance `x ln(x / np) + np - x`, accurate when `x` is close to `np`.
pub(crate) fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// Natural log of the binomial mass `C(n, k) p^k q^(n-k)`.
///
/// Both `p` and `q = 1 - p` are passed so callers can supply each at full
/// precision (e.g. `q = exp(-x)`, `p = -expm1(-x)`); `ln_q` is passed for
/// the same reason. Requires `k <= n`.
pub(crate) fn ln_binomial_pmf(k: u64, n: u64, p: f64, q: f64, ln_q: f64) -> f64 {
    debug_assert!(k <= n);
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    if k == 0 {
        return nf * ln_q;
    }
    if k == n {
        return if q < 0.1 {
            -bd0(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let kf = k as f64;
    let rest = (n - k) as f64;
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(rest, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}
