//! Chain execution shared by the model commands.

use polar_expansion::expansion::UnconstrainedTarget;
use polar_expansion::hmc::{run_chains, ChainOutput, HmcConfig};
use polar_expansion::par;
use serde::Serialize;

use crate::config::thread_cap;
use crate::error::{CliError, Result};

/// Per-chain sampler statistics echoed into run_meta.json.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    pub chain: usize,
    pub accept_rate: f64,
    pub step_size: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerReport {
    pub threads: usize,
    pub divergences: usize,
    pub chains: Vec<ChainStats>,
}

/// Runs all chains with at most POLAR_THREADS workers.
pub fn sample<T: UnconstrainedTarget>(
    target: &T,
    hmc: &HmcConfig,
    init: Option<&[Vec<f64>]>,
) -> Result<(Vec<ChainOutput>, SamplerReport)> {
    let threads = thread_cap(hmc.chains)?;
    let chains = par::with_threads(Some(threads), || run_chains(target, hmc, init))
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let stats: Vec<ChainStats> = chains
        .iter()
        .map(|c| ChainStats {
            chain: c.chain,
            accept_rate: c.accept_rate,
            step_size: c.step_size,
            divergences: c.divergence_count,
            warmup_divergences: c.warmup_divergences,
        })
        .collect();
    let report = SamplerReport {
        threads,
        divergences: stats.iter().map(|s| s.divergences).sum(),
        chains: stats,
    };
    Ok((chains, report))
}

/// Row i of a chain's draws as a flat vector.
pub fn draw(chain: &ChainOutput, i: usize) -> Vec<f64> {
    chain.draws.row(i).iter().copied().collect()
}
