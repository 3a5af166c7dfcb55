//! Binomial log-probabilities accurate to a few ulps, plus log-space helpers.
//!
//! The point mass uses Loader's saddle-point decomposition (Stirling error
//! term plus the deviance `bd0`), which avoids the catastrophic cancellation
//! of `ln n! - ln x! - ln (n-x)!` for large `n`.

use std::f64::consts::PI;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln n! - ((n + 1/2) ln n - n + ln sqrt(2 pi))`, the Stirling remainder.
fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    debug_assert!(n > 0);
    if n <= 15 {
        let ln_fact: f64 = (2..=n).map(|k| (k as f64).ln()).sum();
        let x = n as f64;
        return ln_fact - (x + 0.5) * x.ln() + x - LN_SQRT_2PI;
    }
    let x = n as f64;
    let nn = x * x;
    if n > 500 {
        (S0 - S1 / nn) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / x
    }
}

/// Deviance term `x ln(x / np) + np - x`, evaluated stably near `x = np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
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

/// `ln Pr[X = k]` for `X ~ Binomial(n, p)`, `p` in `(0, 1)`.
pub fn ln_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    if k == 0 {
        return n as f64 * (-p).ln_1p();
    }
    if k == n {
        return n as f64 * p.ln();
    }
    let (nf, kf) = (n as f64, k as f64);
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

/// The whole log-pmf vector `ln Pr[X = k]`, `k = 0..=n`.
pub fn ln_pmf_table(n: u64, p: f64) -> Vec<f64> {
    (0..=n).map(|k| ln_pmf(n, k, p)).collect()
}

/// `ln(e^a + e^b)` without overflow.
pub fn ln_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln sum_i e^{x_i}`.
pub fn ln_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + xs.iter().map(|&x| (x - hi).exp()).sum::<f64>().ln()
}

/// `ln Pr[X > x]` for every `x = 0..=n` given a log-pmf table.
pub fn ln_upper_tail(ln_pmf: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; ln_pmf.len()];
    let mut acc = f64::NEG_INFINITY;
    for x in (0..ln_pmf.len()).rev() {
        out[x] = acc;
        acc = ln_add(acc, ln_pmf[x]);
    }
    out
}

/// `ln Pr[X < x]` for every `x = 0..=n` given a log-pmf table.
pub fn ln_lower_tail(ln_pmf: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; ln_pmf.len()];
    let mut acc = f64::NEG_INFINITY;
    for (x, &lp) in ln_pmf.iter().enumerate() {
        out[x] = acc;
        acc = ln_add(acc, lp);
    }
    out
}
