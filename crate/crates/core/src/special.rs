//! Normal CDF on the log scale, stable far into both tails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erfc;

const TAIL: f64 = -8.0;
const CF_TERMS: usize = 80;

/// log φ(x) for the standard normal density.
pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Mills ratio (1 − Φ(t)) / φ(t) for t ≥ 8 by its continued fraction.
fn mills_ratio(t: f64) -> f64 {
    let mut v = t;
    for n in (1..=CF_TERMS).rev() {
        v = t + n as f64 / v;
    }
    1.0 / v
}

/// log Φ(x).
pub fn log_ndtr(x: f64) -> f64 {
    if x < TAIL {
        log_norm_pdf(x) + mills_ratio(-x).ln()
    } else if x > -TAIL {
        (-log_ndtr(-x).exp()).ln_1p()
    } else {
        (0.5 * erfc(-x * FRAC_1_SQRT_2)).ln()
    }
}

/// d/dx log Φ(x) = φ(x) / Φ(x).
pub fn d_log_ndtr(x: f64) -> f64 {
    if x < TAIL {
        1.0 / mills_ratio(-x)
    } else {
        (log_norm_pdf(x) - log_ndtr(x)).exp()
    }
}

/// log Φ(x) and its derivative together.
pub fn log_ndtr_with_grad(x: f64) -> (f64, f64) {
    if x < TAIL {
        let r = mills_ratio(-x);
        (log_norm_pdf(x) + r.ln(), 1.0 / r)
    } else {
        let v = log_ndtr(x);
        (v, (log_norm_pdf(x) - v).exp())
    }
}

/// Φ(x).
pub fn ndtr(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}
