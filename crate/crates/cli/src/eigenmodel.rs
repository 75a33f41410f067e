//! The network eigenmodel command.

use std::time::Instant;

use nalgebra::DMatrix;
use polar_expansion::diagnostics::{fmt_f64, summarize, write_summary_csv, SummaryRow};
use polar_expansion::models::eigenmodel::qlq;
use polar_expansion::models::{
    align_eigen_draws, eigenmodel_target, EigenDraw, EigenmodelData, RunningMean,
};
use serde_json::json;

use crate::config::EigenmodelConfig;
use crate::error::{CliError, Result};
use crate::io::{ensure_dir, matrix_csv, numbered, read_table, write_json, write_text};
use crate::runner::{draw, sample, SamplerReport};

#[derive(Debug, Clone)]
pub struct EigenmodelOutput {
    pub summary: Vec<SummaryRow>,
    pub qlq_mean: DMatrix<f64>,
    pub report: SamplerReport,
}

pub fn load_adjacency(config: &EigenmodelConfig) -> Result<EigenmodelData> {
    let table = read_table(&config.data, false)?;
    EigenmodelData::new(table.values)
        .map_err(|e| CliError::Ingestion(format!("{}: {e}", config.data.display())))
}

/// Samples the posterior and writes lambda_trace.csv, summary.csv,
/// qlq_mean.csv and run_meta.json. Factor-level outputs (λ, Q) are label
/// aligned: columns ordered by decreasing λ and signs matched to the first draw.
pub fn run(config: &EigenmodelConfig) -> Result<EigenmodelOutput> {
    let start = Instant::now();
    let data = load_adjacency(config)?;
    let (p, k) = (data.p(), config.k);
    let edge_density = data.edge_density();
    let target = eigenmodel_target(data, k).map_err(|e| CliError::Usage(e.to_string()))?;
    let (chains, report) = sample(&target, &config.hmc, None)?;

    let n = config.hmc.sample_iters;
    let mut intercepts = Vec::with_capacity(n * chains.len());
    let mut eigen = Vec::with_capacity(n * chains.len());
    let mut mean = RunningMean::new(p, p);
    for chain in &chains {
        for i in 0..n {
            let params = target.unpack(&draw(chain, i))?;
            let q = params.q()?.into_matrix();
            mean.push(&qlq(&q, &params.lambda));
            intercepts.push(params.c);
            eigen.push(EigenDraw {
                q,
                lambda: params.lambda,
            });
        }
    }
    let aligned = align_eigen_draws(&eigen);

    let mut names = vec!["c".to_string()];
    names.extend((1..=k).map(|l| format!("lambda[{l}]")));
    names.extend((1..=p).flat_map(|i| (1..=k).map(move |j| format!("Q[{i},{j}]"))));
    let per_chain: Vec<DMatrix<f64>> = (0..chains.len())
        .map(|c| {
            DMatrix::from_fn(n, names.len(), |i, j| {
                let idx = c * n + i;
                let d = &aligned[idx];
                match j {
                    0 => intercepts[idx],
                    j if j <= k => d.lambda[j - 1],
                    j => {
                        let e = j - 1 - k;
                        d.q[(e / k, e % k)]
                    }
                }
            })
        })
        .collect();
    let summary = summarize(&per_chain, &names)?;

    let mut trace = String::from("iteration,chain");
    for l in 1..=k {
        trace.push_str(&format!(",lambda[{l}]"));
    }
    trace.push('\n');
    for (c, m) in per_chain.iter().enumerate() {
        for i in 0..n {
            trace.push_str(&format!("{},{c}", i + 1));
            for l in 1..=k {
                trace.push(',');
                trace.push_str(&fmt_f64(m[(i, l)]));
            }
            trace.push('\n');
        }
    }
    let mut summary_csv = Vec::new();
    write_summary_csv(&mut summary_csv, &summary)
        .map_err(|e| CliError::io(config.out.join("summary.csv"), e))?;
    let qlq_mean = mean.mean().clone();

    ensure_dir(&config.out)?;
    write_text(&config.out.join("lambda_trace.csv"), &trace)?;
    write_text(
        &config.out.join("summary.csv"),
        &String::from_utf8_lossy(&summary_csv),
    )?;
    write_text(
        &config.out.join("qlq_mean.csv"),
        &matrix_csv(&numbered("node", p), &qlq_mean),
    )?;
    write_json(
        &config.out.join("run_meta.json"),
        &json!({
            "command": "eigenmodel",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": config.hmc.seed,
            "config": config,
            "nodes": p,
            "edge_density": edge_density,
            "sampler": &report,
            "wall_time_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(EigenmodelOutput {
        summary,
        qlq_mean,
        report,
    })
}
