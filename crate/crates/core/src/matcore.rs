//! Dense linear-algebra primitives: thin SVD, polar decomposition, symmetric
//! square roots, the multivariate gamma function and the Jacobian of the
//! polar change of variables.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Whenever a matrix is flattened into
//! a parameter vector the layout is row-major (`x[i * k + j] = X[i, j]`).

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Dense real p×k matrix; the unconstrained state of an expanded target.
pub type RectMatrix = DMatrix<f64>;

/// Maximum ‖QᵀQ − I‖_F accepted when constructing a [`StiefelPoint`].
pub const ORTH_TOL: f64 = 1e-10;
/// Minimum d_k/d_1 for a matrix to count as full rank.
pub const RANK_TOL: f64 = 1e-12;
/// Minimum eigenvalue ratio accepted by [`sym_sqrt`].
pub const EIG_TOL: f64 = 1e-14;
/// Relative asymmetry accepted by [`SpdMatrix::new`].
pub const SYM_TOL: f64 = 1e-12;

/// Builds a p×k matrix from a row-major slice.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> RectMatrix {
    debug_assert_eq!(data.len(), rows * cols);
    DMatrix::from_row_slice(rows, cols, data)
}

/// Writes `m` into `out` in row-major order.
pub fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let k = m.ncols();
    debug_assert_eq!(out.len(), m.nrows() * k);
    for i in 0..m.nrows() {
        for j in 0..k {
            out[i * k + j] = m[(i, j)];
        }
    }
}

/// Row-major copy of `m`.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    write_row_major(m, &mut out);
    out
}

fn check_finite(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// A p×k matrix with orthonormal columns, a point of V(k, p).
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(DMatrix<f64>);

impl StiefelPoint {
    /// Validates ‖QᵀQ − I‖_F ≤ [`ORTH_TOL`].
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.ncols() == 0 || q.nrows() < q.ncols() {
            return Err(Error::Dimension(format!(
                "Stiefel point must be p x k with p >= k >= 1, got {} x {}",
                q.nrows(),
                q.ncols()
            )));
        }
        check_finite(&q, "Stiefel point")?;
        let err = orthonormality_error(&q);
        if err > ORTH_TOL {
            return Err(Error::Domain(format!(
                "columns are not orthonormal: |QtQ - I|_F = {err:.3e}"
            )));
        }
        Ok(Self(q))
    }

    pub(crate) fn new_unchecked(q: DMatrix<f64>) -> Self {
        Self(q)
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// ‖QᵀQ − I‖_F.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let k = q.ncols();
    (q.transpose() * q - DMatrix::<f64>::identity(k, k)).norm()
}

/// Symmetric positive definite matrix with its lower Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        Self::with_hint(s, None)
    }

    pub(crate) fn with_hint(s: DMatrix<f64>, hint: Option<&str>) -> Result<Self> {
        if !s.is_square() || s.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "SPD matrix must be square and non-empty, got {} x {}",
                s.nrows(),
                s.ncols()
            )));
        }
        check_finite(&s, "SPD matrix")?;
        let asym = (&s - s.transpose()).norm();
        if asym > SYM_TOL * s.norm() {
            return Err(Error::Domain(format!(
                "matrix is not symmetric: |S - St|_F = {asym:.3e}"
            )));
        }
        let mat = (&s + s.transpose()) * 0.5;
        let chol = Cholesky::new(mat.clone()).ok_or_else(|| Error::NotPositiveDefinite {
            hint: hint.map(str::to_string),
        })?;
        // nalgebra accepts zero pivots as long as they are not negative.
        if chol
            .l_dirty()
            .diagonal()
            .iter()
            .any(|&v| v <= 0.0 || !v.is_finite())
        {
            return Err(Error::NotPositiveDefinite {
                hint: hint.map(str::to_string),
            });
        }
        Ok(Self { mat, chol })
    }

    /// k×k identity.
    pub fn identity(k: usize) -> Self {
        Self::new(DMatrix::identity(k, k)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Lower-triangular factor L with S = L Lᵀ.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// log|S| = 2 Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>()
    }

    /// S⁻¹ B via two triangular solves.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// L⁻¹ B (forward substitution only).
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Multiplies by a positive scalar.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.mat * c)
    }
}

/// Thin SVD X = U diag(d) Vᵀ of a p×k matrix with p ≥ k.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// p×k, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Singular values, descending.
    pub d: DVector<f64>,
    /// k×k orthogonal.
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.d) * self.v.transpose()
    }

    /// d_k / d_1, zero for the zero matrix.
    pub fn rank_ratio(&self) -> f64 {
        let first = self.d[0];
        if first > 0.0 {
            self.d[self.d.len() - 1] / first
        } else {
            0.0
        }
    }
}

pub fn thin_svd(x: &RectMatrix) -> Result<ThinSvd> {
    let (p, k) = x.shape();
    if k == 0 || p < k {
        return Err(Error::Dimension(format!(
            "thin SVD needs p >= k >= 1, got {p} x {k}"
        )));
    }
    check_finite(x, "SVD input")?;
    // nalgebra's bidiagonal SVD can settle on a wrong factorization for
    // rank-deficient input, so the decomposition itself comes from faer.
    let fx = faer::Mat::<f64>::from_fn(p, k, |i, j| x[(i, j)]);
    let svd = fx.thin_svd().map_err(|_| Error::SvdNonConvergence)?;
    let (fu, fv) = (svd.U(), svd.V());
    let fs = svd.S().column_vector();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
    let mut us = DMatrix::zeros(p, k);
    let mut vs = DMatrix::zeros(k, k);
    let mut d = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        d[dst] = fs[src];
        for i in 0..p {
            us[(i, dst)] = fu[(i, src)];
        }
        for i in 0..k {
            vs[(i, dst)] = fv[(i, src)];
        }
    }
    Ok(ThinSvd { u: us, d, v: vs })
}

/// Leading `k` right singular vectors of an arbitrary (n×p) matrix, as p×k.
pub fn right_singular_vectors(m: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (n, p) = m.shape();
    if k == 0 || k > n.min(p) {
        return Err(Error::Dimension(format!(
            "cannot take {k} singular vectors of a {n} x {p} matrix"
        )));
    }
    let vecs = if n >= p {
        thin_svd(m)?.v
    } else {
        thin_svd(&m.transpose())?.u
    };
    Ok(vecs.columns(0, k).into_owned())
}

/// Polar decomposition X = Q S^{1/2} with S = XᵀX.
#[derive(Debug, Clone)]
pub struct PolarPair {
    pub q: StiefelPoint,
    pub s: SpdMatrix,
}

/// Orthogonal polar factor Q_X = U Vᵀ together with the SVD it came from.
///
/// This skips forming S, which is all the samplers need per evaluation.
pub fn polar_factor(x: &RectMatrix) -> Result<(StiefelPoint, ThinSvd)> {
    let svd = thin_svd(x)?;
    let ratio = svd.rank_ratio();
    if !(ratio >= RANK_TOL) {
        return Err(Error::Degenerate {
            ratio,
            tol: RANK_TOL,
        });
    }
    let q = &svd.u * svd.v.transpose();
    Ok((StiefelPoint::new_unchecked(q), svd))
}

pub fn polar_decompose(x: &RectMatrix) -> Result<PolarPair> {
    let (q, _) = polar_factor(x)?;
    let s = SpdMatrix::new(x.transpose() * x)?;
    Ok(PolarPair { q, s })
}

/// Symmetric square root of S, or of S⁻¹ when `inverse` is set.
pub fn sym_sqrt(s: &SpdMatrix, inverse: bool) -> Result<SpdMatrix> {
    let eig = SymmetricEigen::new(s.matrix().clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min < EIG_TOL * max {
        return Err(Error::IllConditioned {
            ratio: min / max,
            tol: EIG_TOL,
        });
    }
    let roots = eig
        .eigenvalues
        .map(|l| if inverse { 1.0 / l.sqrt() } else { l.sqrt() });
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    SpdMatrix::new((&r + r.transpose()) * 0.5)
}

/// log Γ_k(a) = k(k−1)/4 · log π + Σ_{j=1..k} log Γ(a + (1−j)/2).
pub fn log_multigamma(k: usize, a: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain(
            "multivariate gamma needs order k >= 1".into(),
        ));
    }
    let lower = (k as f64 - 1.0) / 2.0;
    if !(a > lower) {
        return Err(Error::Domain(format!(
            "log_multigamma needs a > {lower}, got {a}"
        )));
    }
    let kf = k as f64;
    let head = kf * (kf - 1.0) / 4.0 * PI.ln();
    Ok(head
        + (1..=k)
            .map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0))
            .sum::<f64>())
}

/// Log Jacobian of X ↦ (Q_X, S_X) for X ∈ ℝ^{p×k}, relative to the uniform
/// probability measure on V(k, p):
/// log Γ_k(p/2) − (pk/2) log π − ((p−k−1)/2) log|S|.
pub fn log_polar_jacobian(s: &SpdMatrix, p: usize) -> Result<f64> {
    let k = s.dim();
    if p < k {
        return Err(Error::Dimension(format!(
            "Jacobian needs p >= k, got p = {p}, k = {k}"
        )));
    }
    let (pf, kf) = (p as f64, k as f64);
    Ok(
        log_multigamma(k, pf / 2.0)?
            - pf * kf / 2.0 * PI.ln()
            - (pf - kf - 1.0) / 2.0 * s.log_det(),
    )
}

/// Largest principal angle (radians) between the column spaces of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let qa = polar_factor(a)?.0;
    let qb = polar_factor(b)?.0;
    let cross = qa.matrix().transpose() * qb.matrix();
    let svd = thin_svd(&cross)?;
    let smallest = svd.d[svd.d.len() - 1].clamp(-1.0, 1.0);
    Ok(smallest.acos())
}
