//! Bayesian functional PCA: Y = U D Vᵀ + noise with AR(1) rows, an
//! MACG(K(ρ)) prior on the loading curves V and a uniform prior on U.
//!
//! Flat parameter layout:
//! [X_U (n×k), X_V (p×k), η_d (k), η_σ, η_φ, η_ρ], matrices row-major, with
//! U = Q_{X_U}, V = Q_{X_V}, d = exp(η_d), σ² = exp(η_σ), φ = tanh(η_φ),
//! ρ = exp(η_ρ).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    ar1_loglik_grad, log_halfnormal, log_invgamma, sample_macg, sample_uniform_stiefel, se_kernel,
    MacgParams, SeKernelParams, DEFAULT_NUGGET,
};
use crate::error::{Error, Result};
use crate::expansion::{check_len, polar_vjp_from_svd, UnconstrainedTarget};
use crate::matcore::{
    from_row_major, polar_factor, right_singular_vectors, thin_svd, write_row_major,
};

/// Floor applied to s² when the rank-k fit leaves no residual.
pub const S2_FLOOR: f64 = 1e-8;

/// Mean and standard deviation of the length-scale prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoPrior {
    pub mean: f64,
    pub sd: f64,
}

impl Default for RhoPrior {
    fn default() -> Self {
        Self {
            mean: 365.0 / (4.0 * PI),
            sd: 5.0,
        }
    }
}

impl RhoPrior {
    /// (α, β) of the inverse gamma with this mean and sd:
    /// α = m²/v + 2, β = m(α − 1).
    pub fn invgamma_params(&self) -> Result<(f64, f64)> {
        if !(self.mean > 0.0 && self.sd > 0.0) {
            return Err(Error::Domain(format!(
                "rho prior needs mean, sd > 0, got ({}, {})",
                self.mean, self.sd
            )));
        }
        let alpha = self.mean * self.mean / (self.sd * self.sd) + 2.0;
        Ok((alpha, self.mean * (alpha - 1.0)))
    }
}

#[derive(Debug, Clone)]
pub struct FpcaData {
    pub y_raw: DMatrix<f64>,
    /// y_raw with row and column means removed.
    pub y: DMatrix<f64>,
    pub grid: Vec<f64>,
}

pub fn double_center(y: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = y.shape();
    let row_means: Vec<f64> = (0..n).map(|i| y.row(i).mean()).collect();
    let col_means: Vec<f64> = (0..p).map(|j| y.column(j).mean()).collect();
    let grand = y.mean();
    DMatrix::from_fn(n, p, |i, j| y[(i, j)] - row_means[i] - col_means[j] + grand)
}

impl FpcaData {
    pub fn new(y_raw: DMatrix<f64>, grid: Vec<f64>) -> Result<Self> {
        let (n, p) = y_raw.shape();
        if n < 2 || p < 2 {
            return Err(Error::Dimension(format!(
                "need at least a 2 x 2 data matrix, got {n} x {p}"
            )));
        }
        if grid.len() != p {
            return Err(Error::Dimension(format!(
                "grid has {} points for {p} columns",
                grid.len()
            )));
        }
        if y_raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data matrix".into()));
        }
        if !grid.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Domain("grid must be strictly increasing".into()));
        }
        let y = double_center(&y_raw);
        Ok(Self { y_raw, y, grid })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaHyper {
    pub k: usize,
    pub nu: f64,
    pub s2: f64,
    pub tau2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nugget: f64,
    /// Residual variance of the rank-k fit before flooring.
    pub sigma2_hat: f64,
    /// Set when s² hit [`S2_FLOOR`].
    pub s2_floored: bool,
}

/// Empirical-Bayes hyperparameters from the rank-k truncated SVD Ŷ of the
/// centered data: ν = 1, s² = 3σ̂², τ² = tr(ŶᵀŶ)/k, and (α, β) matching the
/// length-scale prior's mean and sd.
pub fn fpca_empirical_bayes(y: &DMatrix<f64>, k: usize, rho_prior: RhoPrior) -> Result<FpcaHyper> {
    let (n, p) = y.shape();
    if k == 0 || k >= n.min(p) {
        return Err(Error::Domain(format!(
            "rank k = {k} must be in 1..{}",
            n.min(p)
        )));
    }
    let svd = if n >= p {
        thin_svd(y)?
    } else {
        thin_svd(&y.transpose())?
    };
    let d = &svd.d;
    let tau2 = d.iter().take(k).map(|s| s * s).sum::<f64>() / k as f64;
    let (u, v) = if n >= p {
        (&svd.u, &svd.v)
    } else {
        (&svd.v, &svd.u)
    };
    let mut fit = DMatrix::zeros(n, p);
    for l in 0..k {
        fit += d[l] * u.column(l) * v.column(l).transpose();
    }
    let resid = y - fit;
    let count = (n * p) as f64;
    let mean = resid.sum() / count;
    let sigma2_hat = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let s2_raw = 3.0 * sigma2_hat;
    let s2_floored = !(s2_raw > S2_FLOOR);
    let (alpha, beta) = rho_prior.invgamma_params()?;
    Ok(FpcaHyper {
        k,
        nu: 1.0,
        s2: if s2_floored { S2_FLOOR } else { s2_raw },
        tau2,
        alpha,
        beta,
        nugget: DEFAULT_NUGGET,
        sigma2_hat,
        s2_floored,
    })
}

/// Constrained parameter values of a flat state.
#[derive(Debug, Clone)]
pub struct FpcaParams {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub d: Vec<f64>,
    pub sigma2: f64,
    pub phi: f64,
    pub rho: f64,
}

impl FpcaParams {
    /// U D Vᵀ.
    pub fn signal(&self) -> DMatrix<f64> {
        let ud = DMatrix::from_fn(self.u.nrows(), self.u.ncols(), |i, j| {
            self.u[(i, j)] * self.d[j]
        });
        ud * self.v.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct FpcaTarget {
    data: FpcaData,
    hyper: FpcaHyper,
}

pub fn fpca_target(data: FpcaData, hyper: FpcaHyper) -> Result<FpcaTarget> {
    let k = hyper.k;
    if k == 0 || k > data.n() || k > data.p() {
        return Err(Error::Dimension(format!(
            "rank {k} does not fit a {} x {} data matrix",
            data.n(),
            data.p()
        )));
    }
    let positive = [hyper.nu, hyper.s2, hyper.tau2, hyper.alpha, hyper.beta];
    if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(hyper.nugget >= 0.0) {
        return Err(Error::Domain(format!(
            "hyperparameters must be positive: {hyper:?}"
        )));
    }
    Ok(FpcaTarget { data, hyper })
}

/// log cosh with no overflow.
fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// sech²(x) = 1 − tanh²(x) without cancellation.
fn sech2(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

impl FpcaTarget {
    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn k(&self) -> usize {
        self.hyper.k
    }

    pub fn data(&self) -> &FpcaData {
        &self.data
    }

    pub fn hyper(&self) -> &FpcaHyper {
        &self.hyper
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let (n, p, k) = (self.n(), self.p(), self.k());
        (n * k, n * k + p * k, n * k + p * k + k)
    }

    pub fn eta_sigma_index(&self) -> usize {
        self.offsets().2
    }

    pub fn eta_phi_index(&self) -> usize {
        self.offsets().2 + 1
    }

    pub fn eta_rho_index(&self) -> usize {
        self.offsets().2 + 2
    }

    pub fn eta_d_index(&self, l: usize) -> usize {
        self.offsets().1 + l
    }

    pub fn param_names(&self) -> Vec<String> {
        let (n, p, k) = (self.n(), self.p(), self.k());
        let mut names = Vec::with_capacity(self.dim());
        for i in 0..n {
            for j in 0..k {
                names.push(format!("XU[{},{}]", i + 1, j + 1));
            }
        }
        for i in 0..p {
            for j in 0..k {
                names.push(format!("XV[{},{}]", i + 1, j + 1));
            }
        }
        names.extend((0..k).map(|l| format!("eta_d[{}]", l + 1)));
        names.extend(["eta_sigma", "eta_phi", "eta_rho"].map(String::from));
        names
    }

    /// Split a flat vector into (X_U, X_V, η_d, η_σ, η_φ, η_ρ).
    #[allow(clippy::type_complexity)]
    fn split<'a>(
        &self,
        x: &'a [f64],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, &'a [f64], f64, f64, f64)> {
        check_len(x, self.dim())?;
        let (n, p, k) = (self.n(), self.p(), self.k());
        let (a, b, c) = self.offsets();
        Ok((
            from_row_major(n, k, &x[..a]),
            from_row_major(p, k, &x[a..b]),
            &x[b..c],
            x[c],
            x[c + 1],
            x[c + 2],
        ))
    }

    pub fn unpack(&self, x: &[f64]) -> Result<FpcaParams> {
        let (xu, xv, eta_d, eta_s, eta_phi, eta_rho) = self.split(x)?;
        Ok(FpcaParams {
            u: polar_factor(&xu)?.0.into_matrix(),
            v: polar_factor(&xv)?.0.into_matrix(),
            d: eta_d.iter().map(|e| e.exp()).collect(),
            sigma2: eta_s.exp(),
            phi: eta_phi.tanh(),
            rho: eta_rho.exp(),
        })
    }

    /// Flat vector for given unconstrained matrices and constrained scalars.
    pub fn pack(
        &self,
        xu: &DMatrix<f64>,
        xv: &DMatrix<f64>,
        d: &[f64],
        sigma2: f64,
        phi: f64,
        rho: f64,
    ) -> Vec<f64> {
        let (a, b, c) = self.offsets();
        let mut out = vec![0.0; self.dim()];
        write_row_major(xu, &mut out[..a]);
        write_row_major(xv, &mut out[a..b]);
        for (o, di) in out[b..c].iter_mut().zip(d) {
            *o = di.ln();
        }
        out[c] = sigma2.ln();
        out[c + 1] = phi.atanh();
        out[c + 2] = rho.ln();
        out
    }

    fn kernel(&self, rho: f64) -> Result<crate::matcore::SpdMatrix> {
        se_kernel(&SeKernelParams::new(
            self.data.grid.clone(),
            rho,
            self.hyper.nugget,
        )?)
    }
}

impl UnconstrainedTarget for FpcaTarget {
    fn dim(&self) -> usize {
        (self.n() + self.p() + 1) * self.k() + 3
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (xu, xv, eta_d, eta_s, eta_phi, eta_rho) = self.split(x)?;
        let (n, p, k) = (self.n(), self.p(), self.k());
        let h = &self.hyper;
        let (qu, svd_u) = polar_factor(&xu)?;
        let (qv, svd_v) = polar_factor(&xv)?;
        let (u, v) = (qu.matrix(), qv.matrix());
        let d: Vec<f64> = eta_d.iter().map(|e| e.exp()).collect();
        let sigma2 = eta_s.exp();
        let phi = eta_phi.tanh();
        let one_minus_phi2 = sech2(eta_phi);
        let rho = eta_rho.exp();
        let kmat = self.kernel(rho)?;

        // Likelihood: independent AR(1) rows of the residual.
        let ud = DMatrix::from_fn(n, k, |i, j| u[(i, j)] * d[j]);
        let resid = &self.data.y - &ud * v.transpose();
        let mut g_r = DMatrix::zeros(n, p);
        let (mut loglik, mut dphi, mut dsigma2) = (0.0, 0.0, 0.0);
        let mut row = vec![0.0; p];
        let mut row_grad = vec![0.0; p];
        for i in 0..n {
            for (t, r) in row.iter_mut().enumerate() {
                *r = resid[(i, t)];
            }
            let (val, dp, ds) =
                ar1_loglik_grad(&row, phi, one_minus_phi2, sigma2, Some(&mut row_grad));
            loglik += val;
            dphi += dp;
            dsigma2 += ds;
            for (t, g) in row_grad.iter().enumerate() {
                g_r[(i, t)] = *g;
            }
        }

        // X_V ~ N(0, K(ρ), I): −(k/2) log|K| − ½ tr(X_Vᵀ K⁻¹ X_V).
        let a = kmat.solve(&xv);
        let prior_v = -(k as f64) / 2.0 * kmat.log_det() - 0.5 * xv.dot(&a);
        let prior_u = -0.5 * xu.norm_squared();
        let prior_scalars = log_invgamma(rho, h.alpha, h.beta)?
            // Arcsine density −log π − ½ log(1 − φ²), written via log cosh.
            - PI.ln()
            + log_cosh(eta_phi)
            + log_invgamma(sigma2, h.nu / 2.0, h.nu * h.s2 / 2.0)?
            + d.iter()
                .map(|&di| log_halfnormal(di, h.tau2))
                .sum::<Result<f64>>()?;
        let log_jac = eta_d.iter().sum::<f64>() + eta_s - 2.0 * log_cosh(eta_phi) + eta_rho;

        // ∂/∂U and ∂/∂V through R = Y − U D Vᵀ.
        let g_rv = &g_r * v;
        let g_u = DMatrix::from_fn(n, k, |i, j| -g_rv[(i, j)] * d[j]);
        let g_rtu = g_r.transpose() * u;
        let g_v = DMatrix::from_fn(p, k, |i, j| -g_rtu[(i, j)] * d[j]);
        let grad_xu = polar_vjp_from_svd(&svd_u, &g_u)? - &xu;
        let grad_xv = polar_vjp_from_svd(&svd_v, &g_v)? - &a;

        let (o1, o2, o3) = self.offsets();
        write_row_major(&grad_xu, &mut grad[..o1]);
        write_row_major(&grad_xv, &mut grad[o1..o2]);
        for l in 0..k {
            let dl = -u.column(l).dot(&g_rv.column(l)) - d[l] / h.tau2;
            grad[o2 + l] = dl * d[l] + 1.0;
        }
        let (a_s, b_s) = (h.nu / 2.0, h.nu * h.s2 / 2.0);
        let d_sigma2 = dsigma2 - (a_s + 1.0) / sigma2 + b_s / (sigma2 * sigma2);
        grad[o3] = d_sigma2 * sigma2 + 1.0;
        // Arcsine prior and Jacobian together contribute ½ log(1 − φ²).
        grad[o3 + 1] = dphi * one_minus_phi2 - phi;

        // ∂/∂ρ of the X_V prior: ⟨½ A Aᵀ − (k/2) K⁻¹, dK/dρ⟩ with
        // dK_ij/dρ = K_ij · 2(t_i − t_j)²/ρ³ (the nugget does not depend on ρ).
        let kinv = kmat.inverse();
        let grid = &self.data.grid;
        let mut d_rho = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i == j {
                    continue;
                }
                let dt = grid[i] - grid[j];
                let kij = (-dt * dt / (rho * rho)).exp();
                let dk = kij * 2.0 * dt * dt / (rho * rho * rho);
                let aat = a.row(i).dot(&a.row(j));
                d_rho += (0.5 * aat - 0.5 * k as f64 * kinv[(i, j)]) * dk;
            }
        }
        d_rho += -(h.alpha + 1.0) / rho + h.beta / (rho * rho);
        grad[o3 + 2] = d_rho * rho + 1.0;

        Ok(loglik + prior_v + prior_u + prior_scalars + log_jac)
    }
}

/// Running elementwise mean of a stream of equally-shaped matrices.
#[derive(Debug, Clone)]
pub struct RunningMean {
    mean: DMatrix<f64>,
    count: usize,
}

impl RunningMean {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            mean: DMatrix::zeros(rows, cols),
            count: 0,
        }
    }

    pub fn push(&mut self, m: &DMatrix<f64>) {
        self.count += 1;
        let w = 1.0 / self.count as f64;
        self.mean.zip_apply(m, |acc, x| *acc += w * (x - *acc));
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }
}

/// Leading k right singular vectors of the posterior mean of U D Vᵀ.
pub fn fpca_point_estimate_v(mean_signal: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    right_singular_vectors(mean_signal, k)
}

/// Simulated data together with the generating factors.
#[derive(Debug, Clone)]
pub struct SimulatedFpca {
    pub data: FpcaData,
    pub u: DMatrix<f64>,
    pub d: Vec<f64>,
    pub v: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpcaTruth {
    pub d: Vec<f64>,
    pub sigma2: f64,
    pub phi: f64,
    pub rho: f64,
    pub nugget: f64,
}

/// V ~ MACG(K(ρ)), U uniform, noise rows stationary AR(1) with marginal
/// variance σ²; the assembled matrix is then doubly centered.
pub fn simulate_fpca<R: Rng + ?Sized>(
    n: usize,
    grid: &[f64],
    truth: &FpcaTruth,
    rng: &mut R,
) -> Result<SimulatedFpca> {
    let k = truth.d.len();
    let p = grid.len();
    if k == 0 || k > n || k > p {
        return Err(Error::Dimension(format!("rank {k} does not fit {n} x {p}")));
    }
    if !(truth.sigma2 >= 0.0) || !(truth.phi.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "need sigma2 >= 0 and |phi| < 1, got ({}, {})",
            truth.sigma2, truth.phi
        )));
    }
    let kmat = se_kernel(&SeKernelParams::new(
        grid.to_vec(),
        truth.rho,
        truth.nugget,
    )?)?;
    let v = sample_macg(&MacgParams::new(kmat), k, rng)?.into_matrix();
    let u = sample_uniform_stiefel(n, k, rng)?.into_matrix();
    let ud = DMatrix::from_fn(n, k, |i, j| u[(i, j)] * truth.d[j]);
    let mut y = ud * v.transpose();
    let sd = truth.sigma2.sqrt();
    let innov_sd = sd * (1.0 - truth.phi * truth.phi).sqrt();
    for i in 0..n {
        let mut e = sd * rng.sample::<f64, _>(StandardNormal);
        for t in 0..p {
            if t > 0 {
                e = truth.phi * e + innov_sd * rng.sample::<f64, _>(StandardNormal);
            }
            y[(i, t)] += e;
        }
    }
    Ok(SimulatedFpca {
        data: FpcaData::new(y, grid.to_vec())?,
        u,
        d: truth.d.clone(),
        v,
    })
}

/// Sign changes along a sampled curve.
pub fn zero_crossings(curve: &[f64]) -> usize {
    curve.windows(2).filter(|w| w[0] * w[1] < 0.0).count()
}

/// Rice's expected number of zero crossings over an interval of length
/// `span` for a stationary process with kernel exp(−(s − t)²/ρ²).
pub fn rice_zero_crossings(span: f64, rho: f64) -> f64 {
    std::f64::consts::SQRT_2 * span / (PI * rho)
}
