//! Exact draws from the uniform and MACG laws, with their first two moments.

use std::time::Instant;

use nalgebra::DMatrix;
use polar_expansion::distributions::{sample_macg_batch, sample_uniform_stiefel_batch, MacgParams};
use polar_expansion::matcore::{SpdMatrix, StiefelPoint};
use serde::Serialize;
use serde_json::json;

use crate::args::DemoKind;
use crate::config::DemoConfig;
use crate::error::{CliError, Result};
use crate::io::{ensure_dir, matrix_csv, read_table, write_json, write_text};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Moments {
    pub draws: usize,
    /// ‖mean Q‖_F.
    pub mean_norm: f64,
    /// ‖mean QQᵀ − (k/p)I‖_F.
    pub second_moment_error: f64,
}

pub fn moments(draws: &[StiefelPoint]) -> Moments {
    let (p, k) = (draws[0].p(), draws[0].k());
    let n = draws.len() as f64;
    let mut mean = DMatrix::zeros(p, k);
    let mut outer = DMatrix::zeros(p, p);
    for q in draws {
        mean += q.matrix();
        outer += q.matrix() * q.matrix().transpose();
    }
    mean /= n;
    outer /= n;
    let target = DMatrix::identity(p, p) * (k as f64 / p as f64);
    Moments {
        draws: draws.len(),
        mean_norm: mean.norm(),
        second_moment_error: (outer - target).norm(),
    }
}

fn load_sigma(config: &DemoConfig) -> Result<SpdMatrix> {
    let Some(path) = &config.sigma else {
        return Ok(SpdMatrix::identity(config.p));
    };
    let table = read_table(path, false)?;
    if table.values.shape() != (config.p, config.p) {
        return Err(CliError::Ingestion(format!(
            "{}: expected a {p} x {p} covariance, got {} x {}",
            path.display(),
            table.values.nrows(),
            table.values.ncols(),
            p = config.p
        )));
    }
    SpdMatrix::new(table.values)
        .map_err(|e| CliError::Ingestion(format!("{}: {e}", path.display())))
}

/// Draws Q, then writes draws.csv (row-major Q per row), moments.json and
/// run_meta.json.
pub fn run(config: &DemoConfig) -> Result<Moments> {
    let start = Instant::now();
    let draws = match config.kind {
        DemoKind::Sphere | DemoKind::Stiefel => {
            sample_uniform_stiefel_batch(config.p, config.k, config.draws, config.seed)?
        }
        DemoKind::Macg => {
            let params = MacgParams::new(load_sigma(config)?);
            sample_macg_batch(&params, config.k, config.draws, config.seed)?
        }
    };
    let m = moments(&draws);

    let header: Vec<String> = (1..=config.p)
        .flat_map(|i| (1..=config.k).map(move |j| format!("Q[{i},{j}]")))
        .collect();
    let rows = DMatrix::from_fn(draws.len(), config.p * config.k, |r, c| {
        draws[r].matrix()[(c / config.k, c % config.k)]
    });
    let csv = matrix_csv(&header, &rows);

    ensure_dir(&config.out)?;
    write_text(&config.out.join("draws.csv"), &csv)?;
    write_json(&config.out.join("moments.json"), &m)?;
    write_json(
        &config.out.join("run_meta.json"),
        &json!({
            "command": "demo",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "wall_time_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(m)
}
