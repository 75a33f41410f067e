//! Command-line surface. Every option is optional here so that values from a
//! config file can fill the gaps; defaults are applied in [`crate::config`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "polar",
    version,
    about = "Stiefel-manifold MCMC through polar expansion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact draws from the uniform or MACG laws on V(k, p).
    Demo(DemoArgs),
    /// Probit network eigenmodel on a symmetric 0/1 adjacency CSV.
    Eigenmodel(EigenmodelArgs),
    /// Bayesian functional PCA on an n x p CSV of curves.
    Fpca(FpcaArgs),
    /// Gradient, change-of-variables and ESS self-checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Master seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file of option values; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HmcArgs {
    /// Independent chains (default 4).
    #[arg(long)]
    pub chains: Option<usize>,
    /// Warmup iterations per chain (default 1000).
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Post-warmup draws per chain (default 5000).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Step-size adaptation goal (default 0.8).
    #[arg(long)]
    pub target_accept: Option<f64>,
    /// Leapfrog steps per transition are drawn from 1..=this (default 32).
    #[arg(long)]
    pub max_leapfrog_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoKind {
    Sphere,
    Stiefel,
    Macg,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DemoArgs {
    /// Law to sample (default stiefel).
    #[arg(value_enum)]
    pub kind: Option<DemoKind>,
    /// Rows of Q (default 3).
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of columns; sphere draws always use k = 1.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of draws (default 10000).
    #[arg(long)]
    pub draws: Option<usize>,
    /// p x p covariance CSV for the macg demo (identity when omitted).
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EigenmodelArgs {
    /// Symmetric 0/1 adjacency matrix, optional header row.
    pub data: Option<PathBuf>,
    /// Latent dimension (default 3).
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub hmc: HmcArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FpcaArgs {
    /// n x p numeric matrix (rows = curves), optional header row and
    /// optional first column of labels.
    pub data: Option<PathBuf>,
    /// Number of components (default 3).
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep every stride-th column; must divide the column count.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Keep every thin-th draw in v3_draws.csv.
    #[arg(long)]
    pub thin: Option<usize>,
    /// Multiple of each loading curve in pc_effect.csv
    /// (default 2 x posterior mean d_j / sqrt(n)).
    #[arg(long)]
    pub pc_multiple: Option<f64>,
    /// Prior mean of the length-scale ρ (default 365/(4π)).
    #[arg(long)]
    pub rho_prior_mean: Option<f64>,
    /// Prior sd of ρ (default 5).
    #[arg(long)]
    pub rho_prior_sd: Option<f64>,
    #[command(flatten)]
    pub hmc: HmcArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CheckArgs {
    /// Random points per gradient check.
    #[arg(long)]
    pub points: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}
