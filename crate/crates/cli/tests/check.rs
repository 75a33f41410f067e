mod common;

use nalgebra::DMatrix;
use polar_cli::check::{self, CheckReport};
use polar_cli::config::CheckConfig;
use polar_expansion::expansion::polar_vjp;
use polar_expansion::matcore::{thin_svd, RectMatrix};

use common::{code, path_str, read_json, run, stderr};

/// polar_vjp with the sign of its off-range term flipped.
fn sign_flipped_vjp(x: &RectMatrix, g: &DMatrix<f64>) -> polar_expansion::Result<DMatrix<f64>> {
    let svd = thin_svd(x)?;
    let p = x.nrows();
    let dinv = DMatrix::from_diagonal(&svd.d.map(|d| 1.0 / d));
    let off_range = (DMatrix::identity(p, p) - &svd.u * svd.u.transpose())
        * g
        * &svd.v
        * dinv
        * svd.v.transpose();
    Ok(polar_vjp(x, g)? - 2.0 * off_range)
}

fn config(points: usize) -> CheckConfig {
    CheckConfig {
        points,
        seed: 3,
        out: std::env::temp_dir(),
    }
}

#[test]
fn fresh_build_passes_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check", "--out", path_str(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&dir.path().join(check::REPORT_FILE));
    assert_eq!(report["passed"], true);
    let names: Vec<&str> = report["gradients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["polar_vjp", "eigenmodel", "fpca"]);
    for g in report["gradients"].as_array().unwrap() {
        assert!(g["max_rel_error"].as_f64().unwrap() <= check::GRADIENT_TOL);
        assert_eq!(g["points"], 20);
    }
    assert!(report["change_of_variables"]["passed"].as_bool().unwrap());
    assert_eq!(report["ess"]["cases"].as_array().unwrap().len(), 3);
}

#[test]
fn sign_error_in_the_vjp_is_caught_and_located() {
    let report: CheckReport = check::run_with(&config(5), sign_flipped_vjp).unwrap();
    assert!(!report.passed);
    let probe = &report.gradients[0];
    assert_eq!(probe.name, "polar_vjp");
    assert!(!probe.passed);
    assert!(probe.max_rel_error > 1e-2);
    let worst = probe
        .worst_parameter
        .clone()
        .expect("worst coordinate named");
    assert!(worst.starts_with("X["), "{worst}");
    let failures = report.failures();
    assert_eq!(failures.len(), 1);
    assert!(failures[0].contains(&worst), "{failures:?}");
    assert_eq!(check::failure_error(&report).unwrap().exit_code(), 2);
}

#[test]
fn correct_vjp_passes_the_library_suite() {
    let report = check::run_with(&config(3), polar_vjp).unwrap();
    assert!(report.passed, "{:?}", report.failures());
    assert!(check::failure_error(&report).is_none());
}
