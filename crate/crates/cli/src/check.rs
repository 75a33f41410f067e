//! Self-checks: analytic gradients against finite differences, the
//! change-of-variables quadrature and the ESS oracle on AR(1) chains.

use nalgebra::DMatrix;
use polar_expansion::diagnostics::ess;
use polar_expansion::distributions::standard_normal_matrix;
use polar_expansion::error::Result as CoreResult;
use polar_expansion::expansion::{
    check_gradient, circle_change_of_variables_check, polar_vjp, GradientReport,
    UnconstrainedTarget,
};
use polar_expansion::matcore::{
    from_row_major, polar_factor, to_row_major, write_row_major, RectMatrix,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::CheckConfig;
use crate::error::{CliError, Result};
use crate::io::{ensure_dir, write_json};
use crate::synthetic::{
    ar1_series, eigenmodel_fixture, eigenmodel_point, fpca_fixture, fpca_point,
};

pub const GRADIENT_TOL: f64 = 1e-5;
pub const CIRCLE_TOL: f64 = 1e-6;
pub const ESS_REL_TOL: f64 = 0.10;
pub const ESS_PHIS: [f64; 3] = [0.3, 0.5, 0.9];
pub const ESS_DRAWS: usize = 100_000;
pub const REPORT_FILE: &str = "check_report.json";

/// Signature of a vector-Jacobian product through X ↦ Q_X.
pub type VjpFn = fn(&RectMatrix, &DMatrix<f64>) -> CoreResult<DMatrix<f64>>;

/// f(X) = ⟨A, Q_X⟩, whose gradient is vjp(X, A).
struct VjpProbe {
    a: DMatrix<f64>,
    vjp: VjpFn,
}

impl UnconstrainedTarget for VjpProbe {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> CoreResult<f64> {
        let xm = from_row_major(self.a.nrows(), self.a.ncols(), x);
        let (q, _) = polar_factor(&xm)?;
        write_row_major(&(self.vjp)(&xm, &self.a)?, grad);
        Ok(self.a.component_mul(q.matrix()).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub name: String,
    pub points: usize,
    pub dim: usize,
    pub tol: f64,
    pub max_rel_error: f64,
    /// Index of the point holding the worst coordinate.
    pub worst_point: Option<usize>,
    pub worst_coordinate: Option<usize>,
    pub worst_parameter: Option<String>,
    /// Evaluation failures, one per affected point.
    pub failures: Vec<String>,
    pub passed: bool,
}

/// Aggregates `points` reports from `report(i)`, keeping the worst
/// coordinate over all points.
fn gradient_check<F>(
    name: &str,
    dim: usize,
    names: &[String],
    points: usize,
    mut report: F,
) -> GradientCheck
where
    F: FnMut(usize) -> GradientReport,
{
    let mut worst: Option<(usize, usize, f64)> = None;
    let mut failures = Vec::new();
    for i in 0..points {
        let r = report(i);
        if let Some(msg) = r.failure {
            failures.push(format!("point {i}: {msg}"));
            continue;
        }
        if let Some(j) = r.worst_index {
            if worst.is_none_or(|w| r.max_rel_error > w.2) {
                worst = Some((i, j, r.max_rel_error));
            }
        }
    }
    let max_rel_error = worst.map_or(0.0, |w| w.2);
    GradientCheck {
        name: name.to_string(),
        points,
        dim,
        tol: GRADIENT_TOL,
        max_rel_error,
        worst_point: worst.map(|w| w.0),
        worst_coordinate: worst.map(|w| w.1),
        worst_parameter: worst.map(|w| names[w.1].clone()),
        passed: failures.is_empty() && max_rel_error <= GRADIENT_TOL,
        failures,
    }
}

/// Gradient checks of the polar VJP (through `vjp`) at p = 6, k = 3, the
/// eigenmodel at p = 20, k = 3 and FPCA at n = 8, p = 24, k = 2.
pub fn gradient_checks(points: usize, seed: u64, vjp: VjpFn) -> Result<Vec<GradientCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, k) = (6, 3);
    let names: Vec<String> = (1..=p)
        .flat_map(|i| (1..=k).map(move |j| format!("X[{i},{j}]")))
        .collect();
    let probe = gradient_check("polar_vjp", p * k, &names, points, |_| {
        let probe = VjpProbe {
            a: standard_normal_matrix(p, k, &mut rng),
            vjp,
        };
        let x = standard_normal_matrix(p, k, &mut rng);
        check_gradient(&probe, &to_row_major(&x))
    });

    let eigen = eigenmodel_fixture(20, 3, seed)?;
    let eigen_check = gradient_check(
        "eigenmodel",
        eigen.dim(),
        &eigen.param_names(),
        points,
        |_| check_gradient(&eigen, &eigenmodel_point(&eigen, &mut rng)),
    );

    let fpca = fpca_fixture(seed)?;
    let fpca_check = gradient_check("fpca", fpca.dim(), &fpca.param_names(), points, |_| {
        check_gradient(&fpca, &fpca_point(&fpca, &mut rng))
    });
    Ok(vec![probe, eigen_check, fpca_check])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeOfVariablesCheck {
    pub total_mass: f64,
    pub max_angle_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn change_of_variables() -> Result<ChangeOfVariablesCheck> {
    let c = circle_change_of_variables_check()?;
    Ok(ChangeOfVariablesCheck {
        total_mass: c.total_mass,
        max_angle_deviation: c.max_angle_deviation,
        tol: CIRCLE_TOL,
        passed: (c.total_mass - 1.0).abs() <= CIRCLE_TOL && c.max_angle_deviation <= CIRCLE_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssCase {
    pub phi: f64,
    pub draws: usize,
    pub ess_per_iter: f64,
    /// (1 − φ)/(1 + φ).
    pub expected: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssCheck {
    pub cases: Vec<EssCase>,
    pub tol: f64,
    pub passed: bool,
}

pub fn ess_oracle(seed: u64) -> Result<EssCheck> {
    let mut cases = Vec::new();
    for (i, &phi) in ESS_PHIS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let e = ess(&ar1_series(phi, ESS_DRAWS, &mut rng))?;
        let expected = (1.0 - phi) / (1.0 + phi);
        cases.push(EssCase {
            phi,
            draws: ESS_DRAWS,
            ess_per_iter: e.per_iter,
            expected,
            rel_error: (e.per_iter - expected).abs() / expected,
        });
    }
    let passed = cases.iter().all(|c| c.rel_error <= ESS_REL_TOL);
    Ok(EssCheck {
        cases,
        tol: ESS_REL_TOL,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub passed: bool,
    pub seed: u64,
    pub gradients: Vec<GradientCheck>,
    pub change_of_variables: ChangeOfVariablesCheck,
    pub ess: EssCheck,
}

impl CheckReport {
    /// Names of the failing checks.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .gradients
            .iter()
            .filter(|g| !g.passed)
            .map(|g| match &g.worst_parameter {
                Some(name) => format!(
                    "gradient {} (worst coordinate {name}, rel error {:.3e})",
                    g.name, g.max_rel_error
                ),
                None => format!("gradient {}", g.name),
            })
            .collect();
        if !self.change_of_variables.passed {
            out.push("change of variables".into());
        }
        if !self.ess.passed {
            out.push("ESS oracle".into());
        }
        out
    }
}

/// Runs every check with the given VJP.
pub fn run_with(config: &CheckConfig, vjp: VjpFn) -> Result<CheckReport> {
    let gradients = gradient_checks(config.points, config.seed, vjp)?;
    let change_of_variables = change_of_variables()?;
    let ess = ess_oracle(config.seed)?;
    let passed = gradients.iter().all(|g| g.passed) && change_of_variables.passed && ess.passed;
    Ok(CheckReport {
        passed,
        seed: config.seed,
        gradients,
        change_of_variables,
        ess,
    })
}

/// Runs the checks, writes check_report.json and fails with a numerical
/// error naming each failed check.
pub fn run(config: &CheckConfig) -> Result<CheckReport> {
    let report = run_with(config, polar_vjp)?;
    ensure_dir(&config.out)?;
    write_json(&config.out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Error for a report with failures.
pub fn failure_error(report: &CheckReport) -> Option<CliError> {
    (!report.passed)
        .then(|| CliError::Numerical(format!("checks failed: {}", report.failures().join("; "))))
}
