//! Seeded synthetic data sets and parameter points used by the self-checks
//! and by tests.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use polar_expansion::distributions::{
    sample_uniform_stiefel, standard_normal_matrix, DEFAULT_NUGGET,
};
use polar_expansion::matcore::polar_factor;
use polar_expansion::models::eigenmodel::qlq;
use polar_expansion::models::{
    eigenmodel_target, fpca_empirical_bayes, fpca_target, simulate_eigenmodel, simulate_fpca,
    EigenmodelData, EigenmodelParams, EigenmodelTarget, FpcaTarget, FpcaTruth, RhoPrior,
    SimulatedFpca,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// A simulated network with its generating QΛQᵀ.
#[derive(Debug, Clone)]
pub struct SyntheticNetwork {
    pub data: EigenmodelData,
    pub c: f64,
    pub qlq: DMatrix<f64>,
}

/// p nodes with rank-k structure: λ alternates +8, −6, +8, ... and c = −0.5.
pub fn network(p: usize, k: usize, seed: u64) -> Result<SyntheticNetwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = sample_uniform_stiefel(p, k, &mut rng)?;
    let lambda: Vec<f64> = (0..k)
        .map(|l| if l % 2 == 0 { 8.0 } else { -6.0 })
        .collect();
    let c = -0.5;
    let data = simulate_eigenmodel(c, &q, &lambda, &mut rng)?;
    Ok(SyntheticNetwork {
        data,
        c,
        qlq: qlq(q.matrix(), &lambda),
    })
}

/// Community structure: nodes fall into k + 1 equal blocks whose latent
/// positions sit near e_1, ..., e_k and −(e_1 + ... + e_k), with
/// λ_l = 40 − 10l (l = 0, 1, ...) and c = −0.5.
pub fn community_network(p: usize, k: usize, seed: u64) -> Result<SyntheticNetwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = k + 1;
    let x = DMatrix::from_fn(p, k, |i, j| {
        let g = i * groups / p;
        let centre = if g == k {
            -1.0
        } else if g == j {
            1.0
        } else {
            0.0
        };
        centre + 0.1 * rng.sample::<f64, _>(StandardNormal)
    });
    let (q, _) = polar_factor(&x)?;
    let lambda: Vec<f64> = (0..k).map(|l| 40.0 - 10.0 * l as f64).collect();
    let c = -0.5;
    let data = simulate_eigenmodel(c, &q, &lambda, &mut rng)?;
    Ok(SyntheticNetwork {
        data,
        c,
        qlq: qlq(q.matrix(), &lambda),
    })
}

/// Adjacency matrix as 0/1 CSV without a header.
pub fn adjacency_csv(data: &EigenmodelData) -> String {
    let y = data.y();
    let mut out = String::new();
    for i in 0..y.nrows() {
        let row: Vec<&str> = y
            .row(i)
            .iter()
            .map(|&v| if v == 1.0 { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Numeric matrix as CSV with a `c1, c2, ...` header.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    crate::io::matrix_csv(&crate::io::numbered("c", m.ncols()), m)
}

pub fn eigenmodel_fixture(p: usize, k: usize, seed: u64) -> Result<EigenmodelTarget> {
    Ok(eigenmodel_target(network(p, k, seed)?.data, k)?)
}

/// X ~ N(0, 1), λ ~ U(−6, 6), c ~ U(−2, 1).
pub fn eigenmodel_point<R: Rng + ?Sized>(target: &EigenmodelTarget, rng: &mut R) -> Vec<f64> {
    let x = standard_normal_matrix(target.p(), target.k(), rng);
    let lambda: Vec<f64> = (0..target.k())
        .map(|_| rng.random_range(-6.0..6.0))
        .collect();
    target.pack(&EigenmodelParams {
        c: rng.random_range(-2.0..1.0),
        x,
        lambda,
    })
}

/// Length-scale giving about two zero crossings a year under the prior.
pub fn yearly_rho() -> f64 {
    365.0 / (4.0 * PI)
}

pub fn curve_truth(k: usize) -> FpcaTruth {
    let d = (0..k).map(|l| 40.0 * 0.625f64.powi(l as i32)).collect();
    FpcaTruth {
        d,
        sigma2: 1.0,
        phi: 0.5,
        rho: yearly_rho(),
        nugget: DEFAULT_NUGGET,
    }
}

/// Grid 1, 1 + step, ..., with p points.
pub fn grid(p: usize, step: f64) -> Vec<f64> {
    (0..p).map(|j| 1.0 + step * j as f64).collect()
}

/// n curves on `grid` with rank-k structure from [`curve_truth`].
pub fn curves(n: usize, grid: &[f64], k: usize, seed: u64) -> Result<SimulatedFpca> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(simulate_fpca(n, grid, &curve_truth(k), &mut rng)?)
}

/// Daily curves for the stride-15 recovery check: n = 8, 360 days, k = 2,
/// with d = (80, 50)·√15 so the 24 retained columns carry d ≈ (80, 50).
pub fn daily_curves(seed: u64) -> Result<SimulatedFpca> {
    let mut truth = curve_truth(2);
    truth.d = [80.0, 50.0].iter().map(|d| d * 15f64.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(simulate_fpca(8, &grid(360, 1.0), &truth, &mut rng)?)
}

/// n = 8 curves on a 24-point grid with 15-unit spacing, k = 2.
pub fn fpca_fixture(seed: u64) -> Result<FpcaTarget> {
    let sim = curves(8, &grid(24, 15.0), 2, seed)?;
    let hyper = fpca_empirical_bayes(&sim.data.y, 2, RhoPrior::default())?;
    Ok(fpca_target(sim.data, hyper)?)
}

/// X_U, X_V ~ N(0, 1), d ~ U(5, 50), σ² ~ U(0.3, 3), φ ~ U(−0.8, 0.8),
/// ρ ~ U(15, 45).
pub fn fpca_point<R: Rng + ?Sized>(target: &FpcaTarget, rng: &mut R) -> Vec<f64> {
    let xu = standard_normal_matrix(target.n(), target.k(), rng);
    let xv = standard_normal_matrix(target.p(), target.k(), rng);
    let d: Vec<f64> = (0..target.k())
        .map(|_| rng.random_range(5.0..50.0))
        .collect();
    let sigma2 = rng.random_range(0.3..3.0);
    let phi = rng.random_range(-0.8..0.8);
    let rho = rng.random_range(15.0..45.0);
    target.pack(&xu, &xv, &d, sigma2, phi, rho)
}

/// Stationary Gaussian AR(1) series with unit marginal variance.
pub fn ar1_series<R: Rng + ?Sized>(phi: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let sd = (1.0 - phi * phi).sqrt();
    let mut x: f64 = rng.sample(StandardNormal);
    (0..n)
        .map(|_| {
            let out = x;
            x = phi * x + sd * rng.sample::<f64, _>(StandardNormal);
            out
        })
        .collect()
}
