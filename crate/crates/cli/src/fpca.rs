//! The functional PCA command.

use std::time::Instant;

use nalgebra::DMatrix;
use polar_expansion::diagnostics::{fmt_f64, summarize, write_summary_csv, SummaryRow};
use polar_expansion::matcore::{right_singular_vectors, thin_svd};
use polar_expansion::models::{
    fpca_empirical_bayes, fpca_point_estimate_v, fpca_target, FpcaData, FpcaHyper, FpcaTarget,
    RhoPrior, RunningMean,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::config::FpcaConfig;
use crate::error::{CliError, Result};
use crate::io::{ensure_dir, read_table, write_json, write_text};
use crate::runner::{draw, sample, SamplerReport};

/// Stream offset keeping initial-value draws apart from the chains' own
/// streams.
const INIT_STREAM: u64 = 1 << 32;
const INIT_JITTER: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct FpcaOutput {
    pub grid: Vec<f64>,
    pub hyper: FpcaHyper,
    pub summary: Vec<SummaryRow>,
    pub v_estimate: DMatrix<f64>,
    pub v_classical: DMatrix<f64>,
    pub report: SamplerReport,
}

/// Reads the curves and keeps every stride-th column. Column j of the result
/// sits at grid point 1 + j·stride.
pub fn load_curves(config: &FpcaConfig) -> Result<FpcaData> {
    let table = read_table(&config.data, true)?;
    let (n, full) = table.values.shape();
    if full % config.stride != 0 {
        return Err(CliError::Usage(format!(
            "stride {} does not divide the {full} columns of {}",
            config.stride,
            config.data.display()
        )));
    }
    let p = full / config.stride;
    let y = DMatrix::from_fn(n, p, |i, j| table.values[(i, j * config.stride)]);
    let grid = (0..p).map(|j| 1.0 + (j * config.stride) as f64).collect();
    FpcaData::new(y, grid)
        .map_err(|e| CliError::Ingestion(format!("{}: {e}", config.data.display())))
}

/// Starting points near the truncated SVD of the centered data, jittered
/// per chain. The jitter shrinks with the noise-to-signal ratio so that
/// near-noiseless data do not start chains hundreds of noise sds away.
fn initial_points(target: &FpcaTarget, config: &FpcaConfig) -> Result<Vec<Vec<f64>>> {
    let (n, p, k) = (target.n(), target.p(), target.k());
    let y = &target.data().y;
    let (u, d, v) = if n >= p {
        let s = thin_svd(y)?;
        (s.u, s.d, s.v)
    } else {
        let s = thin_svd(&y.transpose())?;
        (s.v, s.d, s.u)
    };
    let sigma2 = target.hyper().sigma2_hat.max(1e-6);
    let spread = INIT_JITTER * (10.0 * sigma2.sqrt() / d[k - 1]).min(1.0);
    Ok((0..config.hmc.chains)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.hmc.seed);
            rng.set_stream(INIT_STREAM + c as u64);
            let mut jitter = |scale: f64| scale + spread * rng.sample::<f64, _>(StandardNormal);
            let xu = DMatrix::from_fn(n, k, |i, j| jitter(u[(i, j)] * (n as f64).sqrt()));
            let xv = DMatrix::from_fn(p, k, |i, j| jitter(v[(i, j)] * (p as f64).sqrt()));
            let d: Vec<f64> = (0..k).map(|l| d[l] * jitter(1.0)).collect();
            target.pack(&xu, &xv, &d, sigma2, 0.0, config.rho_prior_mean)
        })
        .collect())
}

/// Flips each column so its largest-magnitude entry is positive.
fn canonical_signs(mut v: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in v.column_iter_mut() {
        let peak = col
            .iter()
            .copied()
            .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if peak < 0.0 {
            col.neg_mut();
        }
    }
    v
}

/// Flips columns of `v` to agree in sign with `reference`.
fn match_signs(mut v: DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..v.ncols() {
        if v.column(j).dot(&reference.column(j)) < 0.0 {
            v.column_mut(j).neg_mut();
        }
    }
    v
}

fn curves_csv(grid: &[f64], v: &DMatrix<f64>) -> String {
    let mut out = String::from("t");
    for l in 1..=v.ncols() {
        out.push_str(&format!(",v{l}"));
    }
    out.push('\n');
    for (i, t) in grid.iter().enumerate() {
        out.push_str(&fmt_f64(*t));
        for l in 0..v.ncols() {
            out.push(',');
            out.push_str(&fmt_f64(v[(i, l)]));
        }
        out.push('\n');
    }
    out
}

/// Samples the posterior and writes v_estimate.csv, v_classical.csv,
/// rho_draws.csv, v3_draws.csv, pc_effect.csv, summary.csv and
/// run_meta.json. Per-draw factors are ordered by d and sign-matched to the
/// point estimate.
pub fn run(config: &FpcaConfig) -> Result<FpcaOutput> {
    let start = Instant::now();
    let data = load_curves(config)?;
    let (n, p, k) = (data.n(), data.p(), config.k);
    let rho_prior = RhoPrior {
        mean: config.rho_prior_mean,
        sd: config.rho_prior_sd,
    };
    let hyper =
        fpca_empirical_bayes(&data.y, k, rho_prior).map_err(|e| CliError::Usage(e.to_string()))?;
    let grid = data.grid.clone();
    let col_means: Vec<f64> = (0..p).map(|j| data.y_raw.column(j).mean()).collect();
    let v_classical = right_singular_vectors(&data.y, k)?;
    let target = fpca_target(data, hyper.clone())?;
    let init = initial_points(&target, config)?;
    let (chains, report) = sample(&target, &config.hmc, Some(&init))?;

    let iters = config.hmc.sample_iters;
    let focus = k.min(3) - 1;
    let mut signal = RunningMean::new(n, p);
    let mut per_chain = Vec::with_capacity(chains.len());
    let mut curves = Vec::new();
    for chain in &chains {
        let mut m = DMatrix::zeros(iters, k + 3);
        for i in 0..iters {
            let params = target.unpack(&draw(chain, i))?;
            signal.push(&params.signal());
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| params.d[b].total_cmp(&params.d[a]));
            for (slot, &l) in order.iter().enumerate() {
                m[(i, slot)] = params.d[l];
            }
            m[(i, k)] = params.sigma2;
            m[(i, k + 1)] = params.phi;
            m[(i, k + 2)] = params.rho;
            if i % config.thin == 0 {
                curves.push((i, chain.chain, params.v.column(order[focus]).clone_owned()));
            }
        }
        per_chain.push(m);
    }
    let mut names: Vec<String> = (1..=k).map(|l| format!("d[{l}]")).collect();
    names.extend(["sigma2", "phi", "rho"].map(String::from));
    let summary = summarize(&per_chain, &names)?;

    let v_estimate = canonical_signs(fpca_point_estimate_v(signal.mean(), k)?);
    let v_classical = match_signs(v_classical, &v_estimate);
    let reference = v_estimate.column(focus);

    let mut rho_csv = String::from("iteration,chain,rho\n");
    for (c, m) in per_chain.iter().enumerate() {
        for i in 0..iters {
            rho_csv.push_str(&format!("{},{c},{}\n", i + 1, fmt_f64(m[(i, k + 2)])));
        }
    }
    let mut v3_csv = String::from("iteration,chain,component,t,value\n");
    for (i, c, mut v) in curves {
        if v.dot(&reference) < 0.0 {
            v.neg_mut();
        }
        for (t, value) in grid.iter().zip(v.iter()) {
            v3_csv.push_str(&format!(
                "{},{c},{},{},{}\n",
                i + 1,
                focus + 1,
                fmt_f64(*t),
                fmt_f64(*value)
            ));
        }
    }
    let multiples: Vec<f64> = (0..k)
        .map(|l| {
            config
                .pc_multiple
                .unwrap_or(2.0 * summary[l].mean / (n as f64).sqrt())
        })
        .collect();
    let mut effect_csv = String::from("t,component,multiple,mean,plus,minus\n");
    for (l, &mult) in multiples.iter().enumerate() {
        for (j, t) in grid.iter().enumerate() {
            let mean = col_means[j];
            let shift = mult * v_estimate[(j, l)];
            effect_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(*t),
                l + 1,
                fmt_f64(mult),
                fmt_f64(mean),
                fmt_f64(mean + shift),
                fmt_f64(mean - shift)
            ));
        }
    }
    let mut summary_csv = Vec::new();
    write_summary_csv(&mut summary_csv, &summary)
        .map_err(|e| CliError::io(config.out.join("summary.csv"), e))?;

    ensure_dir(&config.out)?;
    write_text(
        &config.out.join("v_estimate.csv"),
        &curves_csv(&grid, &v_estimate),
    )?;
    write_text(
        &config.out.join("v_classical.csv"),
        &curves_csv(&grid, &v_classical),
    )?;
    write_text(&config.out.join("rho_draws.csv"), &rho_csv)?;
    write_text(&config.out.join("v3_draws.csv"), &v3_csv)?;
    write_text(&config.out.join("pc_effect.csv"), &effect_csv)?;
    write_text(
        &config.out.join("summary.csv"),
        &String::from_utf8_lossy(&summary_csv),
    )?;
    write_json(
        &config.out.join("run_meta.json"),
        &json!({
            "command": "fpca",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": config.hmc.seed,
            "config": config,
            "curves": n,
            "grid_points": p,
            "hyperparameters": &hyper,
            "sampler": &report,
            "wall_time_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(FpcaOutput {
        grid,
        hyper,
        summary,
        v_estimate,
        v_classical,
        report,
    })
}
