//! Polar expansion: turns a density on the Stiefel manifold into a density on
//! unconstrained p×k matrices whose polar factor Q_X has that law, and
//! carries gradients back through X ↦ Q_X.
//!
//! Log densities throughout are defined up to an additive constant.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::distributions::MacgParams;
use crate::error::{Error, Result};
use crate::matcore::{
    from_row_major, polar_factor, write_row_major, RectMatrix, SpdMatrix, StiefelPoint, ThinSvd,
};
use crate::par;
use crate::quadrature::gauss_legendre_integrate;

/// Denominator tolerance for the Sylvester step of [`polar_vjp`].
pub const VJP_TOL: f64 = 1e-10;

/// A log density on V(k, p), relative to the uniform probability measure.
pub trait StiefelTarget: Sync {
    fn p(&self) -> usize;
    fn k(&self) -> usize;

    /// log f_Q(Q) and its partials ∂f/∂Q, treating the entries of Q as free.
    fn log_density_grad(&self, q: &StiefelPoint) -> Result<(f64, DMatrix<f64>)>;

    fn log_density(&self, q: &StiefelPoint) -> Result<f64> {
        self.log_density_grad(q).map(|(v, _)| v)
    }
}

/// Differentiable log density over ℝ^dim, the contract the HMC engine samples.
pub trait UnconstrainedTarget: Sync {
    fn dim(&self) -> usize;

    /// Returns log f(x) and writes ∇ log f(x) into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        let mut grad = vec![0.0; self.dim()];
        self.log_density_grad(x, &mut grad)
    }
}

impl<T: UnconstrainedTarget + ?Sized> UnconstrainedTarget for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        (**self).log_density_grad(x, grad)
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        (**self).log_density(x)
    }
}

impl<T: UnconstrainedTarget + ?Sized + Send> UnconstrainedTarget for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        (**self).log_density_grad(x, grad)
    }
}

pub(crate) fn check_len(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Dimension(format!(
            "expected a vector of length {dim}, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// The uniform law on V(k, p).
#[derive(Debug, Clone, Copy)]
pub struct UniformStiefel {
    pub p: usize,
    pub k: usize,
}

impl StiefelTarget for UniformStiefel {
    fn p(&self) -> usize {
        self.p
    }

    fn k(&self) -> usize {
        self.k
    }

    fn log_density_grad(&self, q: &StiefelPoint) -> Result<(f64, DMatrix<f64>)> {
        Ok((0.0, DMatrix::zeros(q.p(), q.k())))
    }
}

/// MACG(Σ) as a Stiefel target.
#[derive(Debug, Clone)]
pub struct MacgTarget {
    pub params: MacgParams,
    pub k: usize,
}

impl StiefelTarget for MacgTarget {
    fn p(&self) -> usize {
        self.params.p()
    }

    fn k(&self) -> usize {
        self.k
    }

    fn log_density_grad(&self, q: &StiefelPoint) -> Result<(f64, DMatrix<f64>)> {
        let value = crate::distributions::log_macg_density(q, &self.params)?;
        // ∂/∂Q −(p/2) log|QᵀΣ⁻¹Q| = −p Σ⁻¹Q (QᵀΣ⁻¹Q)⁻¹
        let sinv_q = self.params.sigma.solve(q.matrix());
        let inner = SpdMatrix::new(q.matrix().transpose() * &sinv_q)?;
        let grad = -(q.p() as f64) * inner.solve(&sinv_q.transpose()).transpose();
        Ok((value, grad))
    }
}

/// ∇_X f(Q_X) given G = ∂f/∂Q at Q_X, using the thin SVD X = U D Vᵀ:
///
/// U [F ∘ (Ĝ − Ĝᵀ)] Vᵀ + (I − UUᵀ) G V D⁻¹ Vᵀ, with Ĝ = UᵀGV and
/// F_ij = 1/(d_i + d_j).
pub fn polar_vjp(x: &RectMatrix, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (_, svd) = polar_factor(x)?;
    polar_vjp_from_svd(&svd, g)
}

/// [`polar_vjp`] reusing an SVD that is already at hand.
pub fn polar_vjp_from_svd(svd: &ThinSvd, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (u, d, v) = (&svd.u, &svd.d, &svd.v);
    let k = d.len();
    if g.shape() != u.shape() {
        return Err(Error::Dimension(format!(
            "cotangent is {:?} but Q is {:?}",
            g.shape(),
            u.shape()
        )));
    }
    let d1 = d[0];
    let dk = d[k - 1];
    if !(2.0 * dk > VJP_TOL * d1) {
        return Err(Error::Degenerate {
            ratio: dk / d1,
            tol: VJP_TOL / 2.0,
        });
    }
    let ut_g = u.transpose() * g;
    let g_hat = &ut_g * v;
    let mut inner = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            inner[(i, j)] = (g_hat[(i, j)] - g_hat[(j, i)]) / (d[i] + d[j]);
        }
    }
    let mut out = u * inner * v.transpose();
    if u.nrows() > k {
        let complement = g - u * ut_g;
        let v_dinv = DMatrix::from_fn(k, k, |i, j| v[(i, j)] / d[j]);
        out += complement * v_dinv * v.transpose();
    }
    Ok(out)
}

/// Expanded density under the Wishart(I_k, p) conditional:
/// log f_X(X) = −½‖X‖²_F + log f_Q(Q_X).
#[derive(Debug, Clone)]
pub struct ExpandedGeneral<T> {
    target: T,
}

pub fn expand_general<T: StiefelTarget>(target: T) -> ExpandedGeneral<T> {
    ExpandedGeneral { target }
}

impl<T: StiefelTarget> ExpandedGeneral<T> {
    pub fn inner(&self) -> &T {
        &self.target
    }

    /// The constant −(pk/2) log 2π dropped from the log density. Adding it
    /// gives a normalized density whenever f_Q is normalized.
    pub fn log_normalizer(&self) -> f64 {
        -((self.target.p() * self.target.k()) as f64) / 2.0 * (2.0 * PI).ln()
    }

    /// Q_X for a flat state vector.
    pub fn stiefel_point(&self, x: &[f64]) -> Result<StiefelPoint> {
        check_len(x, self.dim())?;
        Ok(polar_factor(&from_row_major(self.target.p(), self.target.k(), x))?.0)
    }
}

impl<T: StiefelTarget> UnconstrainedTarget for ExpandedGeneral<T> {
    fn dim(&self) -> usize {
        self.target.p() * self.target.k()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_len(x, self.dim())?;
        let xm = from_row_major(self.target.p(), self.target.k(), x);
        let (q, svd) = polar_factor(&xm)?;
        let (value, g) = self.target.log_density_grad(&q)?;
        let total = polar_vjp_from_svd(&svd, &g)? - &xm;
        write_row_major(&total, grad);
        Ok(value - 0.5 * xm.norm_squared())
    }
}

/// Posterior under an MACG(Σ) prior:
/// log f_X(X) = loglik(Q_X) + log N_{p,k}(X | 0, Σ, I).
#[derive(Debug, Clone)]
pub struct ExpandedMacgPosterior<L> {
    loglik: L,
    sigma: SpdMatrix,
}

pub fn expand_macg_posterior<L: StiefelTarget>(
    loglik: L,
    sigma: SpdMatrix,
) -> Result<ExpandedMacgPosterior<L>> {
    if sigma.dim() != loglik.p() {
        return Err(Error::Dimension(format!(
            "Sigma is {0} x {0} but the likelihood has p = {1}",
            sigma.dim(),
            loglik.p()
        )));
    }
    Ok(ExpandedMacgPosterior { loglik, sigma })
}

impl<L: StiefelTarget> ExpandedMacgPosterior<L> {
    pub fn stiefel_point(&self, x: &[f64]) -> Result<StiefelPoint> {
        check_len(x, self.dim())?;
        Ok(polar_factor(&from_row_major(self.loglik.p(), self.loglik.k(), x))?.0)
    }
}

impl<L: StiefelTarget> UnconstrainedTarget for ExpandedMacgPosterior<L> {
    fn dim(&self) -> usize {
        self.loglik.p() * self.loglik.k()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_len(x, self.dim())?;
        let xm = from_row_major(self.loglik.p(), self.loglik.k(), x);
        let (q, svd) = polar_factor(&xm)?;
        let (value, g) = self.loglik.log_density_grad(&q)?;
        let w = self.sigma.solve_lower(&xm);
        let prior = -0.5 * w.norm_squared() - xm.ncols() as f64 / 2.0 * self.sigma.log_det();
        let total = polar_vjp_from_svd(&svd, &g)? - self.sigma.solve(&xm);
        write_row_major(&total, grad);
        Ok(value + prior)
    }
}

/// Per-coordinate comparison of an analytic gradient with finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub coordinates: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: Option<usize>,
    /// Set when the target could not be evaluated near `x`.
    pub failure: Option<String>,
}

impl GradientReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.failure.is_none() && self.max_rel_error <= tol
    }
}

/// Central differences with one Richardson step and a per-coordinate step
/// h = ε^{1/5}·max(1, |x_i|). Errors are |g − fd| / max(1, |g|, |fd|).
pub fn check_gradient<T: UnconstrainedTarget + ?Sized>(target: &T, x: &[f64]) -> GradientReport {
    let failed = |msg: String| GradientReport {
        coordinates: Vec::new(),
        max_rel_error: f64::INFINITY,
        worst_index: None,
        failure: Some(msg),
    };
    if x.len() != target.dim() {
        return failed(format!(
            "point has length {} but target dim is {}",
            x.len(),
            target.dim()
        ));
    }
    let mut grad = vec![0.0; x.len()];
    if let Err(e) = target.log_density_grad(x, &mut grad) {
        return failed(format!("evaluation at the base point failed: {e}"));
    }
    let base_step = f64::EPSILON.powf(0.2);
    let results = par::map_indexed(
        x.len(),
        |i| -> std::result::Result<CoordinateCheck, String> {
            let h = base_step * x[i].abs().max(1.0);
            let eval = |delta: f64| {
                let mut xp = x.to_vec();
                xp[i] += delta;
                target
                    .log_density(&xp)
                    .map_err(|e| format!("evaluation failed at coordinate {i}: {e}"))
            };
            let central = |h: f64| -> std::result::Result<f64, String> {
                Ok((eval(h)? - eval(-h)?) / (2.0 * h))
            };
            let coarse = central(h)?;
            let fine = central(h / 2.0)?;
            let numeric = (4.0 * fine - coarse) / 3.0;
            let analytic = grad[i];
            let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            Ok(CoordinateCheck {
                index: i,
                analytic,
                numeric,
                rel_error,
            })
        },
    );
    let mut coordinates = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(c) => coordinates.push(c),
            Err(msg) => return failed(msg),
        }
    }
    let worst = coordinates
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .map(|c| (c.index, c.rel_error));
    GradientReport {
        max_rel_error: worst.map_or(0.0, |w| w.1),
        worst_index: worst.map(|w| w.0),
        coordinates,
        failure: None,
    }
}

/// Result of integrating the expanded uniform-circle density over ℝ².
#[derive(Debug, Clone, Serialize)]
pub struct CircleCheck {
    /// ∫ f_X over ℝ²; should be 1.
    pub total_mass: f64,
    /// max_θ |2π ∫ f_X(r cos θ, r sin θ) r dr − 1|; zero for a uniform angle.
    pub max_angle_deviation: f64,
}

/// Quadrature check of the change of variables for p = 2, k = 1 with
/// f_Q ≡ 1: the expanded density must carry unit mass and a uniform angle.
pub fn circle_change_of_variables_check() -> Result<CircleCheck> {
    let target = expand_general(UniformStiefel { p: 2, k: 1 });
    let norm = target.log_normalizer();
    let density = |x: f64, y: f64| -> f64 {
        // The origin is rank deficient; it is a null set and the integrand
        // vanishes to first order there.
        target
            .log_density(&[x, y])
            .map(|l| (l + norm).exp())
            .unwrap_or(0.0)
    };
    let limit = 12.0;
    let total_mass = gauss_legendre_integrate(
        |x| gauss_legendre_integrate(|y| density(x, y), -limit, limit, 24, 12),
        -limit,
        limit,
        24,
        12,
    );
    let mut max_angle_deviation: f64 = 0.0;
    for i in 0..64 {
        let theta = 2.0 * PI * (i as f64 + 0.37) / 64.0;
        let (c, s) = (theta.cos(), theta.sin());
        let radial = gauss_legendre_integrate(|r| density(r * c, r * s) * r, 0.0, limit, 24, 12);
        max_angle_deviation = max_angle_deviation.max((2.0 * PI * radial - 1.0).abs());
    }
    Ok(CircleCheck {
        total_mass,
        max_angle_deviation,
    })
}
