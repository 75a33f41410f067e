//! Densities and exact samplers: uniform and MACG laws on the Stiefel
//! manifold, the matrix normal, the squared-exponential kernel, the AR(1)
//! likelihood and the scalar priors used by the models.
//!
//! Stiefel densities are taken with respect to the uniform probability
//! measure on V(k, p).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::matcore::{log_multigamma, polar_factor, RectMatrix, SpdMatrix, StiefelPoint};
use crate::par;

/// Default diagonal jitter of the squared-exponential kernel.
pub const DEFAULT_NUGGET: f64 = 1e-6;

const BATCH_BLOCK: usize = 1024;

/// Row covariance Σ of an MACG(Σ) law.
#[derive(Debug, Clone)]
pub struct MacgParams {
    pub sigma: SpdMatrix,
}

impl MacgParams {
    pub fn new(sigma: SpdMatrix) -> Self {
        Self { sigma }
    }

    pub fn p(&self) -> usize {
        self.sigma.dim()
    }
}

/// AR(1) parameters: lag-one correlation φ and marginal variance σ².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Params {
    pub phi: f64,
    pub sigma2: f64,
}

impl Ar1Params {
    pub fn new(phi: f64, sigma2: f64) -> Result<Self> {
        if !(phi.abs() < 1.0) {
            return Err(Error::Domain(format!("AR(1) needs |phi| < 1, got {phi}")));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::Domain(format!(
                "AR(1) needs sigma2 > 0, got {sigma2}"
            )));
        }
        Ok(Self { phi, sigma2 })
    }
}

/// Squared-exponential kernel k(s, t) = exp(−(s − t)²/ρ²) on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeKernelParams {
    pub grid: Vec<f64>,
    pub rho: f64,
    pub nugget: f64,
}

impl SeKernelParams {
    pub fn new(grid: Vec<f64>, rho: f64, nugget: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Dimension("kernel grid is empty".into()));
        }
        if !grid.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Domain(
                "kernel grid must be strictly increasing".into(),
            ));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!(
                "length-scale must be positive, got {rho}"
            )));
        }
        if !(nugget >= 0.0) {
            return Err(Error::Domain(format!(
                "nugget must be non-negative, got {nugget}"
            )));
        }
        Ok(Self { grid, rho, nugget })
    }
}

/// p×k matrix of iid standard normals.
pub fn standard_normal_matrix<R: Rng + ?Sized>(p: usize, k: usize, rng: &mut R) -> RectMatrix {
    DMatrix::from_fn(p, k, |_, _| StandardNormal.sample(rng))
}

fn check_dims(p: usize, k: usize) -> Result<()> {
    if k == 0 || p < k {
        return Err(Error::Dimension(format!(
            "need p >= k >= 1, got p = {p}, k = {k}"
        )));
    }
    Ok(())
}

/// Uniform draw on V(k, p): the polar factor of a standard normal matrix.
pub fn sample_uniform_stiefel<R: Rng + ?Sized>(
    p: usize,
    k: usize,
    rng: &mut R,
) -> Result<StiefelPoint> {
    check_dims(p, k)?;
    loop {
        // Rank deficiency has probability zero; redraw if it ever happens.
        match polar_factor(&standard_normal_matrix(p, k, rng)) {
            Ok((q, _)) => return Ok(q),
            Err(Error::Degenerate { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// MACG(Σ) draw: Q_X for X = L Z, L the Cholesky factor of Σ.
pub fn sample_macg<R: Rng + ?Sized>(
    params: &MacgParams,
    k: usize,
    rng: &mut R,
) -> Result<StiefelPoint> {
    let p = params.p();
    check_dims(p, k)?;
    let l = params.sigma.cholesky_l();
    loop {
        let x = &l * standard_normal_matrix(p, k, rng);
        match polar_factor(&x) {
            Ok((q, _)) => return Ok(q),
            Err(Error::Degenerate { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// `n` draws of `sample(rng)`, generated in fixed-size blocks with one
/// ChaCha stream per block so the output does not depend on thread count.
pub fn sample_batch<T, F>(n: usize, seed: u64, sample: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync + Send,
{
    let blocks = n.div_ceil(BATCH_BLOCK);
    let chunks = par::map_indexed(blocks, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let len = BATCH_BLOCK.min(n - b * BATCH_BLOCK);
        (0..len)
            .map(|_| sample(&mut rng))
            .collect::<Result<Vec<T>>>()
    });
    let mut out = Vec::with_capacity(n);
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

pub fn sample_uniform_stiefel_batch(
    p: usize,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<StiefelPoint>> {
    check_dims(p, k)?;
    sample_batch(n, seed, |rng| sample_uniform_stiefel(p, k, rng))
}

pub fn sample_macg_batch(
    params: &MacgParams,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<StiefelPoint>> {
    check_dims(params.p(), k)?;
    sample_batch(n, seed, |rng| sample_macg(params, k, rng))
}

/// log MACG(Σ) density: −(k/2) log|Σ| − (p/2) log|QᵀΣ⁻¹Q|.
pub fn log_macg_density(q: &StiefelPoint, params: &MacgParams) -> Result<f64> {
    let (p, k) = (q.p(), q.k());
    if params.p() != p {
        return Err(Error::Dimension(format!(
            "Sigma is {0} x {0} but Q has {p} rows",
            params.p()
        )));
    }
    let w = params.sigma.solve_lower(q.matrix());
    let inner = SpdMatrix::new(w.transpose() * w)?;
    Ok(-(k as f64) / 2.0 * params.sigma.log_det() - p as f64 / 2.0 * inner.log_det())
}

/// log N_{p,k}(X | 0, Σ, I).
pub fn log_matrix_normal(x: &RectMatrix, sigma: &SpdMatrix) -> Result<f64> {
    let (p, k) = x.shape();
    if sigma.dim() != p {
        return Err(Error::Dimension(format!(
            "Sigma is {0} x {0} but X has {p} rows",
            sigma.dim()
        )));
    }
    let w = sigma.solve_lower(x);
    let (pf, kf) = (p as f64, k as f64);
    Ok(-pf * kf / 2.0 * (2.0 * PI).ln() - kf / 2.0 * sigma.log_det() - 0.5 * w.norm_squared())
}

/// Unfactored kernel matrix, nugget included.
pub fn se_kernel_matrix(grid: &[f64], rho: f64, nugget: f64) -> DMatrix<f64> {
    let p = grid.len();
    let inv = 1.0 / (rho * rho);
    DMatrix::from_fn(p, p, |i, j| {
        let d = grid[i] - grid[j];
        (-d * d * inv).exp() + if i == j { nugget } else { 0.0 }
    })
}

pub fn se_kernel(params: &SeKernelParams) -> Result<SpdMatrix> {
    let k = se_kernel_matrix(&params.grid, params.rho, params.nugget);
    SpdMatrix::with_hint(
        k,
        Some(&format!(
            "squared-exponential kernel with rho = {} and nugget = {:e}; increase the nugget",
            params.rho, params.nugget
        )),
    )
}

/// AR(1) log-likelihood of one series plus its partials.
///
/// Takes 1 − φ² precomputed so callers using φ = tanh(η) can pass sech²(η)
/// without cancellation. Returns (value, ∂/∂φ, ∂/∂σ²) and writes ∂/∂x.
pub(crate) fn ar1_loglik_grad(
    x: &[f64],
    phi: f64,
    one_minus_phi2: f64,
    sigma2: f64,
    grad_x: Option<&mut [f64]>,
) -> (f64, f64, f64) {
    let p = x.len();
    let pf = p as f64;
    let mut q = x[0] * x[0];
    let mut dq_dphi = 0.0;
    let mut innov = Vec::with_capacity(p);
    innov.push(0.0);
    for t in 1..p {
        let e = x[t] - phi * x[t - 1];
        innov.push(e);
        q += e * e / one_minus_phi2;
        dq_dphi += -2.0 * e * x[t - 1] / one_minus_phi2
            + 2.0 * phi * e * e / (one_minus_phi2 * one_minus_phi2);
    }
    let value = -pf / 2.0 * (2.0 * PI * sigma2).ln()
        - (pf - 1.0) / 2.0 * one_minus_phi2.ln()
        - q / (2.0 * sigma2);
    let d_phi = (pf - 1.0) * phi / one_minus_phi2 - dq_dphi / (2.0 * sigma2);
    let d_sigma2 = -pf / (2.0 * sigma2) + q / (2.0 * sigma2 * sigma2);
    if let Some(g) = grad_x {
        for t in 0..p {
            let mut dq = if t == 0 {
                2.0 * x[0]
            } else {
                2.0 * innov[t] / one_minus_phi2
            };
            if t + 1 < p {
                dq -= 2.0 * phi * innov[t + 1] / one_minus_phi2;
            }
            g[t] = -dq / (2.0 * sigma2);
        }
    }
    (value, d_phi, d_sigma2)
}

/// Gaussian log density of `row` under covariance σ²Ω(φ), Ω_ij = φ^|i−j|,
/// evaluated in O(p) through x₁ ~ N(0, σ²), x_t | x_{t−1} ~ N(φx_{t−1}, σ²(1−φ²)).
pub fn ar1_loglik(row: &[f64], params: &Ar1Params) -> Result<f64> {
    if row.is_empty() {
        return Err(Error::Dimension("AR(1) series is empty".into()));
    }
    let Ar1Params { phi, sigma2 } = *params;
    Ok(ar1_loglik_grad(row, phi, 1.0 - phi * phi, sigma2, None).0)
}

/// Arcsine density on (−1, 1): −log π − ½ log(1 − φ²).
pub fn log_arcsine(phi: f64) -> Result<f64> {
    if !(phi.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "arcsine density needs |phi| < 1, got {phi}"
        )));
    }
    Ok(-PI.ln() - 0.5 * (1.0 - phi * phi).ln())
}

/// Inverse-gamma(α, β) log density.
pub fn log_invgamma(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(x > 0.0) || !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::Domain(format!(
            "inverse gamma needs x, alpha, beta > 0, got ({x}, {alpha}, {beta})"
        )));
    }
    Ok(alpha * beta.ln() - ln_gamma(alpha) - (alpha + 1.0) * x.ln() - beta / x)
}

/// N(0, τ²) restricted to d > 0.
pub fn log_halfnormal(d: f64, tau2: f64) -> Result<f64> {
    if !(d > 0.0) || !(tau2 > 0.0) {
        return Err(Error::Domain(format!(
            "half-normal needs d, tau2 > 0, got ({d}, {tau2})"
        )));
    }
    Ok(0.5 * (2.0 / (PI * tau2)).ln() - d * d / (2.0 * tau2))
}

/// Wishart W_p(I_k) log density of a k×k SPD matrix.
pub fn log_wishart_identity(s: &SpdMatrix, p: usize) -> Result<f64> {
    let k = s.dim();
    if p < k {
        return Err(Error::Dimension(format!(
            "Wishart needs p >= k, got p = {p}, k = {k}"
        )));
    }
    let (pf, kf) = (p as f64, k as f64);
    Ok((pf - kf - 1.0) / 2.0 * s.log_det()
        - s.matrix().trace() / 2.0
        - pf * kf / 2.0 * 2f64.ln()
        - log_multigamma(k, pf / 2.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::from_row_major;
    use crate::quadrature::{adaptive_simpson, gauss_legendre_integrate};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn outer_mean(draws: &[StiefelPoint]) -> DMatrix<f64> {
        let p = draws[0].p();
        let mut acc = DMatrix::zeros(p, p);
        for q in draws {
            acc += q.matrix() * q.matrix().transpose();
        }
        acc / draws.len() as f64
    }

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(v.to_vec()))).unwrap()
    }

    #[test]
    fn zero_sphere_is_plus_minus_one() {
        let draws = sample_uniform_stiefel_batch(1, 1, 4000, 1).unwrap();
        let plus = draws.iter().filter(|q| q.matrix()[(0, 0)] == 1.0).count();
        let minus = draws.iter().filter(|q| q.matrix()[(0, 0)] == -1.0).count();
        assert_eq!(plus + minus, 4000);
        // Binomial(4000, 1/2): sd ≈ 31.6.
        assert!((plus as f64 - 2000.0).abs() < 150.0);
    }

    #[test]
    fn sphere_moments() {
        let draws = sample_uniform_stiefel_batch(5, 1, 50_000, 2).unwrap();
        let mut mean = DMatrix::zeros(5, 1);
        for q in &draws {
            mean += q.matrix();
        }
        mean /= draws.len() as f64;
        assert!(mean.norm() <= 0.02);
        let dev = outer_mean(&draws) - DMatrix::identity(5, 5) / 5.0;
        assert!(dev.norm() <= 0.02);
    }

    #[test]
    fn stiefel_projection_moments() {
        let draws = sample_uniform_stiefel_batch(4, 2, 50_000, 3).unwrap();
        let dev = outer_mean(&draws) - DMatrix::identity(4, 4) * 0.5;
        assert!(dev.norm() <= 0.02, "{}", dev.norm());
    }

    #[test]
    fn macg_identity_projection_moments() {
        let params = MacgParams::new(SpdMatrix::identity(3));
        let draws = sample_macg_batch(&params, 2, 50_000, 4).unwrap();
        let dev = outer_mean(&draws) - DMatrix::identity(3, 3) * (2.0 / 3.0);
        assert!(dev.norm() <= 0.02);
    }

    #[test]
    fn macg_with_identity_matches_uniform_sampler() {
        let params = MacgParams::new(SpdMatrix::identity(4));
        let a = sample_macg_batch(&params, 2, 100, 5).unwrap();
        let b = sample_uniform_stiefel_batch(4, 2, 100, 5).unwrap();
        for (qa, qb) in a.iter().zip(&b) {
            assert_abs_diff_eq!(qa.matrix(), qb.matrix(), epsilon = 1e-14);
        }
    }

    #[test]
    fn macg_scale_invariance() {
        let sigma = SpdMatrix::new(from_row_major(
            3,
            3,
            &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0],
        ))
        .unwrap();
        let base = MacgParams::new(sigma.clone());
        let scaled = MacgParams::new(sigma.scaled(7.3).unwrap());
        let a = sample_macg_batch(&base, 2, 200, 6).unwrap();
        let b = sample_macg_batch(&scaled, 2, 200, 6).unwrap();
        for (qa, qb) in a.iter().zip(&b) {
            assert!((qa.matrix() - qb.matrix()).amax() <= 1e-12);
            let la = log_macg_density(qa, &base).unwrap();
            let lb = log_macg_density(qa, &scaled).unwrap();
            assert!((la - lb).abs() <= 1e-10);
        }
    }

    #[test]
    fn macg_density_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = sample_uniform_stiefel(5, 2, &mut rng).unwrap();
        let ident = MacgParams::new(SpdMatrix::identity(5));
        assert_abs_diff_eq!(log_macg_density(&q, &ident).unwrap(), 0.0, epsilon = 1e-13);

        let (a, b) = (4.0, 1.5);
        let q = StiefelPoint::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let got = log_macg_density(&q, &MacgParams::new(diag(&[a, b]))).unwrap();
        assert_abs_diff_eq!(got, 0.5 * (a / b).ln(), epsilon = 1e-14);
    }

    fn circle_density(params: &MacgParams, theta: f64) -> f64 {
        let q = StiefelPoint::new(DMatrix::from_column_slice(
            2,
            1,
            &[theta.cos(), theta.sin()],
        ))
        .unwrap();
        log_macg_density(&q, params).unwrap().exp()
    }

    #[test]
    fn macg_density_integrates_to_one_on_circle() {
        let params =
            MacgParams::new(SpdMatrix::new(from_row_major(2, 2, &[3.0, 0.8, 0.8, 0.5])).unwrap());
        let mass = gauss_legendre_integrate(|t| circle_density(&params, t), 0.0, 2.0 * PI, 40, 16)
            / (2.0 * PI);
        assert!((mass - 1.0).abs() < 1e-10, "{mass}");
    }

    #[test]
    fn macg_circle_goodness_of_fit() {
        let params = MacgParams::new(diag(&[4.0, 1.0]));
        let draws = sample_macg_batch(&params, 1, 50_000, 8).unwrap();
        let bins = 40;
        let width = 2.0 * PI / bins as f64;
        let mut counts = vec![0usize; bins];
        for q in &draws {
            let theta = q.matrix()[(1, 0)]
                .atan2(q.matrix()[(0, 0)])
                .rem_euclid(2.0 * PI);
            counts[((theta / width) as usize).min(bins - 1)] += 1;
        }
        let n = draws.len() as f64;
        let stat: f64 = counts
            .iter()
            .enumerate()
            .map(|(b, &c)| {
                let lo = b as f64 * width;
                let prob =
                    gauss_legendre_integrate(|t| circle_density(&params, t), lo, lo + width, 20, 1)
                        / (2.0 * PI);
                let expected = n * prob;
                (c as f64 - expected).powi(2) / expected
            })
            .sum();
        let pval = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
        assert!(pval > 0.01, "chi2 = {stat}, p = {pval}");
    }

    #[test]
    fn identity_macg_radial_part_is_independent() {
        // Under Σ = I, log|S_X| and Q_X are independent.
        let draws = sample_batch(50_000, 9, |rng| {
            let x = standard_normal_matrix(3, 2, rng);
            let (q, svd) = polar_factor(&x)?;
            let logdet = 2.0 * svd.d.iter().map(|d| d.ln()).sum::<f64>();
            Ok((logdet, q.matrix()[(0, 0)]))
        })
        .unwrap();
        let n = draws.len() as f64;
        let (ma, mb) = draws
            .iter()
            .fold((0.0, 0.0), |acc, d| (acc.0 + d.0 / n, acc.1 + d.1 / n));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for &(a, b) in &draws {
            sab += (a - ma) * (b - mb);
            saa += (a - ma).powi(2);
            sbb += (b - mb).powi(2);
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr.abs() <= 0.02, "{corr}");
    }

    #[test]
    fn matrix_normal_values() {
        let x = DMatrix::zeros(2, 1);
        assert_abs_diff_eq!(
            log_matrix_normal(&x, &SpdMatrix::identity(2)).unwrap(),
            -(2.0 * PI).ln(),
            epsilon = 1e-14
        );
        let x = from_row_major(3, 2, &[0.3, -1.2, 0.7, 0.1, -0.4, 2.0]);
        let separable: f64 = x.iter().map(|v| -0.5 * (2.0 * PI).ln() - 0.5 * v * v).sum();
        assert_abs_diff_eq!(
            log_matrix_normal(&x, &SpdMatrix::identity(3)).unwrap(),
            separable,
            epsilon = 1e-13
        );

        // Dense inverse oracle.
        let s = from_row_major(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let det = s.determinant();
        let inv = s.clone().try_inverse().unwrap();
        let oracle = -3.0 * (2.0 * PI).ln() - det.ln() - 0.5 * (x.transpose() * inv * &x).trace();
        let got = log_matrix_normal(&x, &SpdMatrix::new(s).unwrap()).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-10);
    }

    #[test]
    fn se_kernel_entries_and_factorization() {
        let params = SeKernelParams::new(vec![0.0, 2.0, 5.0], 2.0, 0.1).unwrap();
        let k = se_kernel(&params).unwrap();
        assert_abs_diff_eq!(k.matrix()[(1, 1)], 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(k.matrix()[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);

        let grid: Vec<f64> = (0..73).map(|i| 1.0 + 5.0 * i as f64).collect();
        let params = SeKernelParams::new(grid, 29.0, DEFAULT_NUGGET).unwrap();
        let k = se_kernel(&params).unwrap();
        let l = k.cholesky_l();
        assert!((&l * l.transpose() - k.matrix()).norm() <= 1e-8);
    }

    #[test]
    fn se_kernel_failure_suggests_nugget() {
        let grid: Vec<f64> = (0..200).map(f64::from).collect();
        let params = SeKernelParams::new(grid, 60.0, 0.0).unwrap();
        match se_kernel(&params) {
            Err(Error::NotPositiveDefinite { hint: Some(h) }) => assert!(h.contains("nugget")),
            other => panic!("expected a factorization failure, got {other:?}"),
        }
        assert!(SeKernelParams::new(vec![1.0, 1.0], 1.0, 0.0).is_err());
        assert!(SeKernelParams::new(vec![1.0, 2.0], -1.0, 0.0).is_err());
    }

    #[test]
    fn ar1_small_cases() {
        let params = Ar1Params::new(0.3, 2.0).unwrap();
        let expected = -0.5 * (2.0 * PI * 2.0).ln() - 0.49 / 4.0;
        assert_abs_diff_eq!(
            ar1_loglik(&[0.7], &params).unwrap(),
            expected,
            epsilon = 1e-14
        );

        let params = Ar1Params::new(0.5, 1.0).unwrap();
        let expected = -(2.0 * PI).ln() - 0.5 * 0.75f64.ln();
        assert_abs_diff_eq!(
            ar1_loglik(&[0.0, 0.0], &params).unwrap(),
            expected,
            epsilon = 1e-14
        );

        assert!(Ar1Params::new(1.0, 1.0).is_err());
        assert!(Ar1Params::new(0.0, 0.0).is_err());
    }

    fn ar1_dense_oracle(x: &[f64], phi: f64, sigma2: f64) -> f64 {
        let p = x.len();
        let cov = DMatrix::from_fn(p, p, |i, j| sigma2 * phi.powi((i as i32 - j as i32).abs()));
        let chol = nalgebra::Cholesky::new(cov).unwrap();
        let xv = DVector::from_column_slice(x);
        let w = chol.l().solve_lower_triangular(&xv).unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -(p as f64) / 2.0 * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * w.norm_squared()
    }

    #[test]
    fn ar1_matches_dense_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for &(phi, sigma2) in &[(0.6, 1.3), (-0.8, 0.4), (0.95, 2.0)] {
            let x: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
            let got = ar1_loglik(&x, &Ar1Params::new(phi, sigma2).unwrap()).unwrap();
            assert_abs_diff_eq!(got, ar1_dense_oracle(&x, phi, sigma2), epsilon = 1e-10);
        }
    }

    #[test]
    fn ar1_independent_case_and_shift() {
        let x = [0.3, -1.0, 2.2, 0.5];
        let sigma2 = 1.7;
        let indep: f64 = x
            .iter()
            .map(|v| -0.5 * (2.0 * PI * sigma2).ln() - v * v / (2.0 * sigma2))
            .sum();
        let got = ar1_loglik(&x, &Ar1Params::new(0.0, sigma2).unwrap()).unwrap();
        assert_abs_diff_eq!(got, indep, epsilon = 1e-13);

        // Shifting a row by a constant moves the log density by the dense
        // quadratic form's prediction.
        let (phi, c) = (0.4, 0.9);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let params = Ar1Params::new(phi, sigma2).unwrap();
        let delta = ar1_loglik(&shifted, &params).unwrap() - ar1_loglik(&x, &params).unwrap();
        let oracle = ar1_dense_oracle(&shifted, phi, sigma2) - ar1_dense_oracle(&x, phi, sigma2);
        assert_abs_diff_eq!(delta, oracle, epsilon = 1e-11);
    }

    #[test]
    fn ar1_gradient_matches_finite_differences() {
        let x = [0.4, -0.3, 1.1, 0.9, -2.0];
        let (phi, sigma2) = (0.55, 0.8);
        let mut g = [0.0; 5];
        let (_, dphi, ds2) = ar1_loglik_grad(&x, phi, 1.0 - phi * phi, sigma2, Some(&mut g));
        let f = |x: &[f64], phi: f64, s2: f64| ar1_loglik_grad(x, phi, 1.0 - phi * phi, s2, None).0;
        let h = 1e-6;
        for t in 0..5 {
            let mut up = x;
            let mut dn = x;
            up[t] += h;
            dn[t] -= h;
            assert_abs_diff_eq!(
                g[t],
                (f(&up, phi, sigma2) - f(&dn, phi, sigma2)) / (2.0 * h),
                epsilon = 1e-7
            );
        }
        assert_abs_diff_eq!(
            dphi,
            (f(&x, phi + h, sigma2) - f(&x, phi - h, sigma2)) / (2.0 * h),
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            ds2,
            (f(&x, phi, sigma2 + h) - f(&x, phi, sigma2 - h)) / (2.0 * h),
            epsilon = 1e-6
        );
    }

    #[test]
    fn scalar_priors() {
        assert_abs_diff_eq!(log_arcsine(0.0).unwrap(), -PI.ln(), epsilon = 1e-15);
        let (alpha, beta) = (3.5, 2.0);
        let mode = beta / (alpha + 1.0);
        let h = 1e-5;
        let slope = (log_invgamma(mode + h, alpha, beta).unwrap()
            - log_invgamma(mode - h, alpha, beta).unwrap())
            / (2.0 * h);
        assert!(slope.abs() < 1e-8);
        assert!(log_arcsine(1.0).is_err());
        assert!(log_invgamma(0.0, 1.0, 1.0).is_err());
        assert!(log_halfnormal(-1.0, 1.0).is_err());
    }

    #[test]
    fn scalar_priors_integrate_to_one() {
        // Substitute φ = sin u to remove the endpoint singularities.
        let arcsine = adaptive_simpson(
            &|u: f64| {
                log_arcsine(u.sin())
                    .map(|l| l.exp() * u.cos())
                    .unwrap_or(0.0)
            },
            -PI / 2.0 + 1e-12,
            PI / 2.0 - 1e-12,
            1e-10,
        );
        assert!((arcsine - 1.0).abs() < 1e-6, "{arcsine}");

        let (alpha, beta) = (35.75, 1009.4);
        let ig = adaptive_simpson(
            &|x: f64| log_invgamma(x, alpha, beta).unwrap().exp(),
            1.0,
            200.0,
            1e-10,
        );
        assert!((ig - 1.0).abs() < 1e-6, "{ig}");
        let ig = adaptive_simpson(
            &|x: f64| log_invgamma(x, 2.0, 1.0).map(f64::exp).unwrap_or(0.0),
            1e-9,
            1e5,
            1e-10,
        );
        assert!((ig - 1.0).abs() < 1e-5, "{ig}");

        let hn = adaptive_simpson(
            &|d: f64| log_halfnormal(d, 2.5).map(f64::exp).unwrap_or(0.0),
            1e-12,
            40.0,
            1e-10,
        );
        assert!((hn - 1.0).abs() < 1e-6, "{hn}");
    }

    #[test]
    fn wishart_times_jacobian_is_gaussian() {
        use crate::matcore::{log_polar_jacobian, polar_decompose};
        let x = from_row_major(4, 2, &[0.5, -1.0, 1.2, 0.3, -0.7, 0.9, 0.1, 2.0]);
        let s = polar_decompose(&x).unwrap().s;
        let lhs = log_wishart_identity(&s, 4).unwrap() + log_polar_jacobian(&s, 4).unwrap();
        let rhs = -4.0 * (2.0 * PI).ln() - 0.5 * x.norm_squared();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }
}
