//! Probit network eigenmodel: P(y_ij = 1) = Φ(c + (QΛQᵀ)_ij) for i > j,
//! with c ~ N(0, 10²), λ_l ~ N(0, p) and Q uniform on V(k, p).
//!
//! Flat parameter layout: [c, X (p×k, row-major), λ (k)], with Q = Q_X.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::expansion::{check_len, polar_vjp_from_svd, UnconstrainedTarget};
use crate::matcore::{from_row_major, polar_factor, write_row_major, StiefelPoint};
use crate::special::{log_ndtr_with_grad, ndtr};

const C_PRIOR_VAR: f64 = 100.0;

/// Symmetric binary adjacency matrix; the diagonal is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenmodelData {
    y: DMatrix<f64>,
}

impl EigenmodelData {
    /// Validates symmetry and 0/1 entries off the diagonal. Errors name the
    /// first offending cell with 1-based indices.
    pub fn new(y: DMatrix<f64>) -> Result<Self> {
        let p = y.nrows();
        if !y.is_square() || p < 2 {
            return Err(Error::Dimension(format!(
                "adjacency must be square with p >= 2, got {} x {}",
                p,
                y.ncols()
            )));
        }
        for i in 0..p {
            for j in 0..p {
                if i == j {
                    continue;
                }
                let v = y[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Domain(format!(
                        "cell (row {}, column {}) is {v}, expected 0 or 1",
                        i + 1,
                        j + 1
                    )));
                }
                if j < i && v != y[(j, i)] {
                    return Err(Error::Domain(format!(
                        "cell (row {}, column {}) is {} but its mirror (row {}, column {}) is {v}",
                        j + 1,
                        i + 1,
                        y[(j, i)],
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { y })
    }

    pub fn p(&self) -> usize {
        self.y.nrows()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Same network with nodes relabelled: node i becomes node perm[i].
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let p = self.p();
        let mut out = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                out[(perm[i], perm[j])] = self.y[(i, j)];
            }
        }
        Self::new(out)
    }

    pub fn edge_density(&self) -> f64 {
        let p = self.p();
        let edges: f64 = (0..p)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| self.y[(i, j)])
            .sum();
        edges / (p * (p - 1) / 2) as f64
    }
}

/// Unpacked parameters of a flat state vector.
#[derive(Debug, Clone)]
pub struct EigenmodelParams {
    pub c: f64,
    pub x: DMatrix<f64>,
    pub lambda: Vec<f64>,
}

impl EigenmodelParams {
    pub fn q(&self) -> Result<StiefelPoint> {
        Ok(polar_factor(&self.x)?.0)
    }

    /// QΛQᵀ.
    pub fn qlq(&self) -> Result<DMatrix<f64>> {
        Ok(qlq(self.q()?.matrix(), &self.lambda))
    }
}

pub fn qlq(q: &DMatrix<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * lambda[j]);
    scaled * q.transpose()
}

#[derive(Debug, Clone)]
pub struct EigenmodelTarget {
    data: EigenmodelData,
    k: usize,
}

pub fn eigenmodel_target(data: EigenmodelData, k: usize) -> Result<EigenmodelTarget> {
    if k == 0 || k > data.p() {
        return Err(Error::Dimension(format!(
            "rank k = {k} must lie in 1..={}",
            data.p()
        )));
    }
    Ok(EigenmodelTarget { data, k })
}

impl EigenmodelTarget {
    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &EigenmodelData {
        &self.data
    }

    pub fn unpack(&self, x: &[f64]) -> Result<EigenmodelParams> {
        check_len(x, self.dim())?;
        let (p, k) = (self.p(), self.k);
        Ok(EigenmodelParams {
            c: x[0],
            x: from_row_major(p, k, &x[1..1 + p * k]),
            lambda: x[1 + p * k..].to_vec(),
        })
    }

    pub fn pack(&self, params: &EigenmodelParams) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        out[0] = params.c;
        write_row_major(&params.x, &mut out[1..1 + self.p() * self.k]);
        out[1 + self.p() * self.k..].copy_from_slice(&params.lambda);
        out
    }

    /// Index of λ_l in the flat vector.
    pub fn lambda_index(&self, l: usize) -> usize {
        1 + self.p() * self.k + l
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["c".to_string()];
        for i in 0..self.p() {
            for j in 0..self.k {
                names.push(format!("X[{},{}]", i + 1, j + 1));
            }
        }
        names.extend((0..self.k).map(|l| format!("lambda[{}]", l + 1)));
        names
    }
}

impl UnconstrainedTarget for EigenmodelTarget {
    fn dim(&self) -> usize {
        1 + self.p() * self.k + self.k
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let params = self.unpack(x)?;
        let (p, k) = (self.p(), self.k);
        let (q, svd) = polar_factor(&params.x)?;
        let q = q.matrix();
        let m = qlq(q, &params.lambda);
        let y = self.data.y();

        let mut loglik = 0.0;
        let mut w = DMatrix::zeros(p, p);
        let mut w_sum = 0.0;
        for i in 0..p {
            for j in 0..i {
                let eta = params.c + m[(i, j)];
                // log(1 − Φ(η)) = log Φ(−η), so both branches share one routine.
                let (value, slope) = if y[(i, j)] == 1.0 {
                    log_ndtr_with_grad(eta)
                } else {
                    let (v, g) = log_ndtr_with_grad(-eta);
                    (v, -g)
                };
                loglik += value;
                w[(i, j)] = slope;
                w[(j, i)] = slope;
                w_sum += slope;
            }
        }

        let lam_var = p as f64;
        let log_prior = -params.c * params.c / (2.0 * C_PRIOR_VAR)
            - 0.5 * params.x.norm_squared()
            - params.lambda.iter().map(|l| l * l).sum::<f64>() / (2.0 * lam_var);

        let wq = &w * q;
        let g_q = DMatrix::from_fn(p, k, |i, j| wq[(i, j)] * params.lambda[j]);
        let g_x = polar_vjp_from_svd(&svd, &g_q)? - &params.x;

        grad[0] = w_sum - params.c / C_PRIOR_VAR;
        write_row_major(&g_x, &mut grad[1..1 + p * k]);
        for l in 0..k {
            let quad = q.column(l).dot(&wq.column(l));
            grad[1 + p * k + l] = 0.5 * quad - params.lambda[l] / lam_var;
        }
        Ok(loglik + log_prior)
    }
}

/// Draws y_ij ~ Bernoulli(Φ(c + (QΛQᵀ)_ij)) independently for i > j.
pub fn simulate_eigenmodel<R: Rng + ?Sized>(
    c: f64,
    q: &StiefelPoint,
    lambda: &[f64],
    rng: &mut R,
) -> Result<EigenmodelData> {
    if lambda.len() != q.k() {
        return Err(Error::Dimension(format!(
            "{} eigenvalues for k = {}",
            lambda.len(),
            q.k()
        )));
    }
    let p = q.p();
    let m = qlq(q.matrix(), lambda);
    let mut y = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..i {
            let u: f64 = rng.random();
            if u < ndtr(c + m[(i, j)]) {
                y[(i, j)] = 1.0;
                y[(j, i)] = 1.0;
            }
        }
    }
    EigenmodelData::new(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{sample_uniform_stiefel, standard_normal_matrix};
    use crate::expansion::check_gradient;
    use crate::matcore::to_row_major;
    use crate::special::log_ndtr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_point(target: &EigenmodelTarget, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let p = target.p();
        let k = target.k();
        let x = standard_normal_matrix(p, k, rng);
        let lambda: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
        target.pack(&EigenmodelParams {
            c: rng.random_range(-2.0..1.0),
            x,
            lambda,
        })
    }

    fn network(p: usize, k: usize, seed: u64) -> (EigenmodelTarget, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = sample_uniform_stiefel(p, k, &mut rng).unwrap();
        let lambda: Vec<f64> = (0..k)
            .map(|l| if l % 2 == 0 { 8.0 } else { -6.0 })
            .collect();
        let data = simulate_eigenmodel(-0.5, &q, &lambda, &mut rng).unwrap();
        (eigenmodel_target(data, k).unwrap(), rng)
    }

    #[test]
    fn single_dyad_at_zero_is_log_half() {
        for y in [0.0, 1.0] {
            let data =
                EigenmodelData::new(DMatrix::from_row_slice(2, 2, &[0.0, y, y, 0.0])).unwrap();
            let t = eigenmodel_target(data, 1).unwrap();
            // c = 0, λ = 0 and ‖X‖ = 1 leave −½ from the X prior.
            let v = t.log_density(&[0.0, 0.6, 0.8, 0.0]).unwrap();
            assert!((v - (0.5f64.ln() - 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn sign_and_permutation_symmetry() {
        let (t, mut rng) = network(12, 3, 1);
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for _ in 0..5 {
            let x = random_point(&t, &mut rng);
            let base = t.log_density(&x).unwrap();
            let params = t.unpack(&x).unwrap();
            for perm in perms {
                for signs in 0..8u32 {
                    let moved = EigenmodelParams {
                        c: params.c,
                        x: DMatrix::from_fn(12, 3, |i, j| {
                            let s = if signs >> j & 1 == 1 { -1.0 } else { 1.0 };
                            s * params.x[(i, perm[j])]
                        }),
                        lambda: perm.iter().map(|&j| params.lambda[j]).collect(),
                    };
                    let v = t.log_density(&t.pack(&moved)).unwrap();
                    assert!(
                        (v - base).abs() <= 1e-12,
                        "perm {perm:?} signs {signs}: {v} vs {base}"
                    );
                }
            }
        }
    }

    #[test]
    fn probit_terms_swap_under_reflection() {
        for &eta in &[0.0, 1.0, 5.0, 10.0, 30.0] {
            let at_plus = (log_ndtr(eta), log_ndtr(-eta));
            let at_minus = (log_ndtr(-eta), log_ndtr(eta));
            assert_eq!(at_plus.0, at_minus.1);
            assert_eq!(at_plus.1, at_minus.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (t, mut rng) = network(20, 3, 2);
        for _ in 0..20 {
            let x = random_point(&t, &mut rng);
            let report = check_gradient(&t, &x);
            assert!(
                report.passes(1e-5),
                "{:?} at {:?}",
                report.max_rel_error,
                report.worst_index
            );
        }
    }

    #[test]
    fn gradient_is_finite_far_in_the_tails() {
        let (t, mut rng) = network(8, 2, 3);
        let mut params = t.unpack(&random_point(&t, &mut rng)).unwrap();
        params.c = -35.0;
        params.lambda = vec![0.5, -0.5];
        let x = t.pack(&params);
        let mut g = vec![0.0; t.dim()];
        let v = t.log_density_grad(&x, &mut g).unwrap();
        assert!(v.is_finite() && g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn extreme_intercept_gives_empty_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = sample_uniform_stiefel(40, 2, &mut rng).unwrap();
        let data = simulate_eigenmodel(-10.0, &q, &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(data.edge_density(), 0.0);
    }

    #[test]
    fn zero_signal_gives_half_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = sample_uniform_stiefel(50, 2, &mut rng).unwrap();
        let data = simulate_eigenmodel(0.0, &q, &[0.0, 0.0], &mut rng).unwrap();
        assert!((data.edge_density() - 0.5).abs() <= 0.05);
    }

    #[test]
    fn edge_frequencies_follow_the_probit() {
        // Replicate networks with fixed (c, Q, Λ) and compare per-dyad
        // frequencies to Φ(η), pooled by probability band.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = sample_uniform_stiefel(30, 2, &mut rng).unwrap();
        let lambda = [8.0, -6.0];
        let m = qlq(q.matrix(), &lambda);
        let reps = 400;
        let mut hits = DMatrix::<f64>::zeros(30, 30);
        for _ in 0..reps {
            hits += simulate_eigenmodel(0.0, &q, &lambda, &mut rng).unwrap().y();
        }
        let mut bands = vec![(0.0, 0.0, 0usize); 5];
        for i in 0..30 {
            for j in 0..i {
                let prob = ndtr(m[(i, j)]);
                let b = ((prob * 5.0) as usize).min(4);
                bands[b].0 += hits[(i, j)];
                bands[b].1 += prob * reps as f64;
                bands[b].2 += 1;
            }
        }
        for (observed, expected, count) in bands {
            if count == 0 {
                continue;
            }
            let sd = (expected * (1.0 - expected / (count * reps) as f64))
                .sqrt()
                .max(1.0);
            assert!(
                (observed - expected).abs() <= 4.0 * sd,
                "{observed} vs {expected}"
            );
        }
    }

    #[test]
    fn rejects_bad_adjacency() {
        let asym = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let err = EigenmodelData::new(asym).unwrap_err().to_string();
        assert!(err.contains("row 1, column 2"), "{err}");
        let nonbinary = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!(EigenmodelData::new(nonbinary)
            .unwrap_err()
            .to_string()
            .contains("row 1, column 2"));
        // Diagonal values are ignored.
        assert!(EigenmodelData::new(DMatrix::from_row_slice(2, 2, &[7.0, 1.0, 1.0, 0.3])).is_ok());
    }

    #[test]
    fn pack_and_unpack_round_trip() {
        let (t, mut rng) = network(6, 2, 7);
        let x = random_point(&t, &mut rng);
        assert_eq!(t.pack(&t.unpack(&x).unwrap()), x);
        assert_eq!(t.param_names().len(), t.dim());
        assert_eq!(t.param_names()[t.lambda_index(1)], "lambda[2]");
        let q = t.unpack(&x).unwrap().q().unwrap();
        assert_eq!(to_row_major(q.matrix()).len(), 12);
    }

    #[test]
    fn permuting_nodes_permutes_the_likelihood_consistently() {
        let (t, mut rng) = network(10, 2, 8);
        let perm: Vec<usize> = vec![3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
        let moved = eigenmodel_target(t.data().permuted(&perm).unwrap(), 2).unwrap();
        let x = random_point(&t, &mut rng);
        let params = t.unpack(&x).unwrap();
        let mut px = params.x.clone();
        for (i, &to) in perm.iter().enumerate().take(10) {
            px.set_row(to, &params.x.row(i));
        }
        let y = moved.pack(&EigenmodelParams {
            c: params.c,
            x: px,
            lambda: params.lambda.clone(),
        });
        assert!((t.log_density(&x).unwrap() - moved.log_density(&y).unwrap()).abs() < 1e-10);
    }
}
