//! Effective sample size, R-hat and per-parameter summaries.

use std::io::{self, Write};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;

/// Shortest series accepted by [`ess`].
pub const MIN_ESS_LEN: usize = 100;
/// ESS is capped at this multiple of the series length.
pub const ESS_CAP: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ess {
    pub value: f64,
    pub per_iter: f64,
    /// Set when the series has zero variance; `value` is then 0.
    pub constant: bool,
    /// Lag at which the autocorrelation sum was truncated (even).
    pub truncation_lag: usize,
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series contains non-finite values".into()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with divisor n − 1.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Lag-`lag` autocovariance with divisor n.
fn autocov(centered: &[f64], lag: usize) -> f64 {
    let n = centered.len();
    centered[..n - lag]
        .iter()
        .zip(&centered[lag..])
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n as f64
}

/// Single-chain ESS by Geyer's initial monotone sequence estimator.
pub fn ess(series: &[f64]) -> Result<Ess> {
    let n = series.len();
    if n < MIN_ESS_LEN {
        return Err(Error::Domain(format!(
            "ESS needs at least {MIN_ESS_LEN} draws, got {n}"
        )));
    }
    check_finite(series)?;
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|v| v - m).collect();
    let gamma0 = autocov(&centered, 0);
    let scale = series.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if gamma0 <= (1e-14 * scale).powi(2) {
        return Ok(Ess {
            value: 0.0,
            per_iter: 0.0,
            constant: true,
            truncation_lag: 0,
        });
    }
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(&centered, lag) + autocov(&centered, lag + 1)) / gamma0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / ESS_CAP);
    let value = n as f64 / tau;
    Ok(Ess {
        value,
        per_iter: value / n as f64,
        constant: false,
        truncation_lag: lag,
    })
}

/// Pair sums ρ_{2m} + ρ_{2m+1} up to the truncation point, after the
/// monotone correction.
pub fn geyer_pair_sums(series: &[f64]) -> Result<Vec<f64>> {
    let est = ess(series)?;
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|v| v - m).collect();
    let gamma0 = autocov(&centered, 0);
    let mut out = Vec::new();
    let mut prev = f64::INFINITY;
    for lag in (0..est.truncation_lag).step_by(2) {
        let pair = ((autocov(&centered, lag) + autocov(&centered, lag + 1)) / gamma0).min(prev);
        out.push(pair);
        prev = pair;
    }
    Ok(out)
}

/// ESS of several chains: the sum of per-chain estimates.
pub fn ess_chains(chains: &[Vec<f64>]) -> Result<Ess> {
    if chains.is_empty() {
        return Err(Error::Domain("no chains supplied".into()));
    }
    let per: Vec<Ess> = chains.iter().map(|c| ess(c)).collect::<Result<_>>()?;
    let total: usize = chains.iter().map(Vec::len).sum();
    let value: f64 = per.iter().map(|e| e.value).sum();
    Ok(Ess {
        value,
        per_iter: value / total as f64,
        constant: per.iter().all(|e| e.constant),
        truncation_lag: per.iter().map(|e| e.truncation_lag).max().unwrap_or(0),
    })
}

/// Potential scale reduction over whole chains.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Domain(format!(
            "R-hat needs at least two chains, got {}",
            chains.len()
        )));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Domain("chains have unequal lengths".into()));
    }
    if n < 2 {
        return Err(Error::Domain("chains need at least two draws".into()));
    }
    for c in chains {
        check_finite(c)?;
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

/// R-hat with every chain split into its first and second halves; an odd
/// middle draw is dropped.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::Domain("no chains supplied".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Domain("chains have unequal lengths".into()));
    }
    if n < 4 {
        return Err(Error::Domain(format!(
            "split R-hat needs chains of length at least 4, got {n}"
        )));
    }
    let half = n / 2;
    let halves: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect();
    rhat(&halves)
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// None when chains are too short for the estimator.
    pub ess: Option<f64>,
    pub ess_per_iter: Option<f64>,
    pub rhat: Option<f64>,
}

/// Per-column summaries of a set of chains (each iterations × parameters),
/// in column order.
pub fn summarize(chains: &[DMatrix<f64>], names: &[String]) -> Result<Vec<SummaryRow>> {
    let first = chains
        .first()
        .ok_or_else(|| Error::Domain("no chains supplied".into()))?;
    let dim = first.ncols();
    if names.len() != dim {
        return Err(Error::Dimension(format!(
            "{} names for {dim} parameters",
            names.len()
        )));
    }
    if chains.iter().any(|c| c.shape() != first.shape()) {
        return Err(Error::Dimension("chains have different shapes".into()));
    }
    if first.nrows() == 0 {
        return Err(Error::Domain("chains are empty".into()));
    }
    if chains.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("draws contain non-finite values".into()));
    }
    Ok(par::map_indexed(dim, |j| {
        let cols: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.column(j).iter().copied().collect())
            .collect();
        let mut pooled: Vec<f64> = cols.concat();
        let n = pooled.len();
        let m = mean(&pooled);
        let sd = if n > 1 { variance(&pooled).sqrt() } else { 0.0 };
        pooled.sort_by(f64::total_cmp);
        let ess = ess_chains(&cols).ok();
        SummaryRow {
            name: names[j].clone(),
            mean: m,
            sd,
            q05: quantile_sorted(&pooled, 0.05),
            q50: quantile_sorted(&pooled, 0.50),
            q95: quantile_sorted(&pooled, 0.95),
            ess: ess.map(|e| e.value),
            ess_per_iter: ess.map(|e| e.per_iter),
            rhat: split_rhat(&cols).ok(),
        }
    }))
}

/// Round-trip float formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

pub const SUMMARY_HEADER: &str = "parameter,mean,sd,q05,q50,q95,ess,ess_per_iter,rhat";
pub const TRACE_HEADER: &str = "iteration,chain,parameter,value";

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER.split(','))?;
    for r in rows {
        out.write_record([
            r.name.clone(),
            fmt_f64(r.mean),
            fmt_f64(r.sd),
            fmt_f64(r.q05),
            fmt_f64(r.q50),
            fmt_f64(r.q95),
            fmt_opt(r.ess),
            fmt_opt(r.ess_per_iter),
            fmt_opt(r.rhat),
        ])?;
    }
    out.flush()
}

/// Tidy long-format traces keeping every `thin`-th draw. Iterations are
/// 1-based post-warmup indices; chains are 0-based.
pub fn write_tidy_trace<W: Write>(
    w: W,
    chains: &[DMatrix<f64>],
    names: &[String],
    thin: usize,
) -> io::Result<()> {
    let thin = thin.max(1);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER.split(','))?;
    for (c, draws) in chains.iter().enumerate() {
        for i in (0..draws.nrows()).step_by(thin) {
            for (j, name) in names.iter().enumerate().take(draws.ncols()) {
                out.write_record([
                    (i + 1).to_string(),
                    c.to_string(),
                    name.clone(),
                    fmt_f64(draws[(i, j)]),
                ])?;
            }
        }
    }
    out.flush()
}
