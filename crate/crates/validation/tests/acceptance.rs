//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use polar_cli::config::{EigenmodelConfig, FpcaConfig};
use polar_cli::{check, eigenmodel, fpca, synthetic};
use polar_expansion::distributions::{
    sample_macg, sample_macg_batch, sample_uniform_stiefel_batch, se_kernel, MacgParams,
    SeKernelParams, DEFAULT_NUGGET,
};
use polar_expansion::expansion::{expand_general, polar_vjp, UnconstrainedTarget, UniformStiefel};
use polar_expansion::hmc::{run_chains, HmcConfig};
use polar_expansion::matcore::{max_principal_angle, right_singular_vectors, SpdMatrix};
use polar_expansion::models::eigenmodel::EigenmodelParams;
use polar_expansion::models::fpca::{double_center, zero_crossings};
use polar_expansion::quadrature::gauss_legendre_integrate;
use polar_validation::{chi_square_gof, ks_pvalue, ks_statistic, Verdict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn judge(id: &str, title: &str, limit: Duration, body: impl FnOnce() -> Outcome) -> Verdict {
    let start = Instant::now();
    let result = body();
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    if elapsed > limit {
        passed = false;
        detail.push_str(&format!(
            "; exceeded the {:.0} s budget",
            limit.as_secs_f64()
        ));
    }
    Verdict {
        id: id.to_string(),
        title: title.to_string(),
        passed,
        detail,
        elapsed,
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn change_of_variables() -> Outcome {
    let c = check::change_of_variables().map_err(|e| e.to_string())?;
    Ok((
        c.passed,
        format!(
            "total mass {:.12}, max angle-marginal deviation {:.3e} (tol 1e-6)",
            c.total_mass, c.max_angle_deviation
        ),
    ))
}

fn gradient_integrity() -> Outcome {
    let checks = check::gradient_checks(20, 11, polar_vjp).map_err(|e| e.to_string())?;
    let passed = checks.iter().all(|g| g.passed);
    let detail = checks
        .iter()
        .map(|g| format!("{} max rel err {:.2e}", g.name, g.max_rel_error))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((passed, format!("{detail} (tol 1e-5, 20 points each)")))
}

/// Angle density of MACG(Σ) on the circle, relative to dθ.
fn circle_macg_density(theta: f64, sigma: &DMatrix<f64>) -> f64 {
    let inv = sigma.clone().try_inverse().expect("invertible");
    let (c, s) = (theta.cos(), theta.sin());
    let quad = inv[(0, 0)] * c * c + 2.0 * inv[(0, 1)] * c * s + inv[(1, 1)] * s * s;
    1.0 / (2.0 * PI * sigma.determinant().sqrt() * quad)
}

fn exact_sampler_moments() -> Outcome {
    let draws = sample_uniform_stiefel_batch(4, 2, 50_000, 3).map_err(|e| e.to_string())?;
    let mut outer = DMatrix::zeros(4, 4);
    for q in &draws {
        outer += q.matrix() * q.matrix().transpose();
    }
    outer /= draws.len() as f64;
    let moment_err = (outer - DMatrix::identity(4, 4) * 0.5).norm();

    let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
    let params = MacgParams::new(SpdMatrix::new(sigma.clone()).map_err(|e| e.to_string())?);
    let bins = 40;
    let circle = sample_macg_batch(&params, 1, 50_000, 4).map_err(|e| e.to_string())?;
    let mut counts = vec![0usize; bins];
    for q in &circle {
        let theta = q.matrix()[(1, 0)].atan2(q.matrix()[(0, 0)]);
        let b = (((theta + PI) / (2.0 * PI)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let width = 2.0 * PI / bins as f64;
    let probs: Vec<f64> = (0..bins)
        .map(|b| {
            let lo = -PI + b as f64 * width;
            gauss_legendre_integrate(|t| circle_macg_density(t, &sigma), lo, lo + width, 20, 1)
        })
        .collect();
    let (stat, p) = chi_square_gof(&counts, &probs);
    Ok((
        moment_err <= 0.02 && p > 0.01,
        format!("‖mean QQᵀ − I/2‖_F = {moment_err:.4} (tol 0.02); circle MACG χ² = {stat:.1} on 39 df, p = {p:.3}"),
    ))
}

fn hmc_through_expansion() -> Outcome {
    let p = 5;
    let target = expand_general(UniformStiefel { p, k: 1 });
    let config = HmcConfig {
        chains: 4,
        warmup_iters: 1000,
        sample_iters: 5000,
        seed: 5,
        ..HmcConfig::default()
    };
    let chains = run_chains(&target, &config, None).map_err(|e| e.to_string())?;
    let divergences: usize = chains.iter().map(|c| c.divergence_count).sum();
    let mut coords: Vec<Vec<f64>> = (0..p).map(|_| Vec::with_capacity(20_000)).collect();
    for chain in &chains {
        for i in 0..chain.draws.nrows() {
            let row = chain.draws.row(i);
            let norm = row.norm();
            for (j, c) in coords.iter_mut().enumerate() {
                c.push(row[j] / norm);
            }
        }
    }
    let cdf = |q: f64| 0.5 + 0.75 * (q - q * q * q / 3.0);
    let pvalues: Vec<f64> = coords
        .iter()
        .map(|c| ks_pvalue(ks_statistic(c, cdf), c.len()))
        .collect();
    let min_p = pvalues.iter().copied().fold(1.0, f64::min);
    Ok((
        min_p > 0.01 && divergences == 0 && target.dim() == p,
        format!(
            "{} draws, KS p-values {:?}, {divergences} post-warmup divergences",
            coords[0].len(),
            pvalues
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
        ),
    ))
}

fn eigenmodel_config(data: &Path, out: &Path, hmc: HmcConfig, k: usize) -> EigenmodelConfig {
    EigenmodelConfig {
        data: data.to_path_buf(),
        k,
        hmc,
        out: out.to_path_buf(),
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn eigenmodel_efficiency(dir: &Path) -> Outcome {
    let net = synthetic::community_network(30, 2, 7).map_err(|e| e.to_string())?;
    let data = dir.join("network.csv");
    fs::write(&data, synthetic::adjacency_csv(&net.data)).map_err(|e| e.to_string())?;
    let config = eigenmodel_config(
        &data,
        &dir.join("eigenmodel"),
        HmcConfig {
            seed: 1,
            ..HmcConfig::default()
        },
        2,
    );
    let out = eigenmodel::run(&config).map_err(|e| e.to_string())?;
    let rows: Vec<_> = out
        .summary
        .iter()
        .filter(|r| r.name == "c" || r.name.starts_with("lambda"))
        .collect();
    let lambda_ess: Vec<f64> = rows
        .iter()
        .filter(|r| r.name.starts_with("lambda"))
        .map(|r| r.ess_per_iter.unwrap_or(0.0))
        .collect();
    let max_rhat = rows
        .iter()
        .map(|r| r.rhat.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let (mut est, mut truth) = (Vec::new(), Vec::new());
    for i in 0..30 {
        for j in 0..i {
            est.push(out.qlq_mean[(i, j)]);
            truth.push(net.qlq[(i, j)]);
        }
    }
    let r = correlation(&est, &truth);
    Ok((
        lambda_ess.iter().all(|&e| e >= 0.2) && max_rhat <= 1.05 && r >= 0.9,
        format!(
            "λ ESS/iteration {:?} (≥ 0.2), max split R-hat {max_rhat:.4} (≤ 1.05), corr(QΛQᵀ) {r:.3} (≥ 0.9)",
            lambda_ess.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    ))
}

fn eigenmodel_symmetry() -> Outcome {
    let target = synthetic::eigenmodel_fixture(20, 3, 2).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut worst = 0.0f64;
    let mut elements = 0;
    for _ in 0..5 {
        let x = synthetic::eigenmodel_point(&target, &mut rng);
        let base = target.log_density(&x).map_err(|e| e.to_string())?;
        let params = target.unpack(&x).map_err(|e| e.to_string())?;
        for perm in perms {
            for signs in 0..8u32 {
                let moved = EigenmodelParams {
                    c: params.c,
                    x: DMatrix::from_fn(20, 3, |i, j| {
                        let s = if signs >> j & 1 == 1 { -1.0 } else { 1.0 };
                        s * params.x[(i, perm[j])]
                    }),
                    lambda: perm.iter().map(|&j| params.lambda[j]).collect(),
                };
                let v = target
                    .log_density(&target.pack(&moved))
                    .map_err(|e| e.to_string())?;
                worst = worst.max((v - base).abs());
                elements += 1;
            }
        }
    }
    Ok((
        worst <= 1e-12,
        format!(
            "{elements} evaluations (48 group elements x 5 points), max |Δ log post| = {worst:.2e}"
        ),
    ))
}

fn fpca_recovery(dir: &Path) -> Outcome {
    let sim = synthetic::daily_curves(8).map_err(|e| e.to_string())?;
    let data = dir.join("curves.csv");
    fs::write(&data, synthetic::matrix_csv(&sim.data.y_raw)).map_err(|e| e.to_string())?;
    let config = FpcaConfig {
        data,
        k: 2,
        stride: 15,
        thin: 10,
        pc_multiple: None,
        rho_prior_mean: 365.0 / (4.0 * PI),
        rho_prior_sd: 5.0,
        hmc: HmcConfig {
            seed: 2,
            ..HmcConfig::default()
        },
        out: dir.join("fpca"),
    };
    let out = fpca::run(&config).map_err(|e| e.to_string())?;

    let ud = DMatrix::from_fn(sim.u.nrows(), 2, |i, j| sim.u[(i, j)] * sim.d[j]);
    let signal = ud * sim.v.transpose();
    let kept = DMatrix::from_fn(signal.nrows(), 24, |i, j| signal[(i, 15 * j)]);
    let v_true = right_singular_vectors(&double_center(&kept), 2).map_err(|e| e.to_string())?;
    let angle = max_principal_angle(&out.v_estimate, &v_true)
        .map_err(|e| e.to_string())?
        .to_degrees();
    let rho_sd = out
        .summary
        .iter()
        .find(|r| r.name == "rho")
        .map_or(f64::INFINITY, |r| r.sd);

    let span = 364.0;
    let rho = synthetic::yearly_rho();
    let grid: Vec<f64> = (0..=364).map(f64::from).collect();
    let kernel =
        se_kernel(&SeKernelParams::new(grid, rho, DEFAULT_NUGGET).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let params = MacgParams::new(kernel);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 2000;
    let mut crossings = 0usize;
    for _ in 0..draws {
        let v = sample_macg(&params, 1, &mut rng).map_err(|e| e.to_string())?;
        crossings += zero_crossings(v.matrix().as_slice());
    }
    let observed = crossings as f64 / draws as f64;
    let stated = span / (2.0 * PI * rho);
    let rel = (observed - stated).abs() / stated;
    Ok((
        angle <= 15.0 && rho_sd < 5.0 && rel <= 0.15,
        format!(
            "(a) principal angle {angle:.2}° (≤ 15°); (b) posterior sd(ρ) {rho_sd:.3} (< 5); \
             (c) mean zero crossings {observed:.3} over T = {span} vs T/(2πρ) = {stated:.3}, rel. error {:.1}% (≤ 15%)",
            100.0 * rel
        ),
    ))
}

fn diagnostics_oracle() -> Outcome {
    let e = check::ess_oracle(13).map_err(|e| e.to_string())?;
    let detail = e
        .cases
        .iter()
        .map(|c| {
            format!(
                "φ={}: ESS/N {:.4} vs {:.4} ({:.1}%)",
                c.phi,
                c.ess_per_iter,
                c.expected,
                100.0 * c.rel_error
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    Ok((e.passed, format!("{detail} (tol 10%, N = 100000)")))
}

fn determinism(dir: &Path) -> Outcome {
    let net = synthetic::community_network(30, 2, 21).map_err(|e| e.to_string())?;
    let data = dir.join("network_det.csv");
    fs::write(&data, synthetic::adjacency_csv(&net.data)).map_err(|e| e.to_string())?;
    let hmc = HmcConfig {
        warmup_iters: 300,
        sample_iters: 400,
        seed: 99,
        ..HmcConfig::default()
    };
    let runs = ["run_a", "run_b"].map(|name| dir.join(name));
    for out in &runs {
        eigenmodel::run(&eigenmodel_config(&data, out, hmc.clone(), 2))
            .map_err(|e| e.to_string())?;
    }
    let mut identical = true;
    let mut compared = Vec::new();
    for file in ["lambda_trace.csv", "summary.csv", "qlq_mean.csv"] {
        let a = fs::read(runs[0].join(file)).map_err(|e| e.to_string())?;
        let b = fs::read(runs[1].join(file)).map_err(|e| e.to_string())?;
        identical &= a == b;
        compared.push(format!(
            "{file} {}",
            if a == b { "identical" } else { "DIFFERS" }
        ));
    }
    Ok((identical, compared.join(", ")))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let verdicts = [
        judge(
            "1",
            "change-of-variables correctness",
            secs(5),
            change_of_variables,
        ),
        judge("2", "gradient integrity", secs(30), gradient_integrity),
        judge(
            "3",
            "exact-sampler moments",
            secs(30),
            exact_sampler_moments,
        ),
        judge(
            "4",
            "HMC through the expansion",
            secs(120),
            hmc_through_expansion,
        ),
        judge("5", "eigenmodel desk-scale efficiency", secs(600), || {
            eigenmodel_efficiency(dir.path())
        }),
        judge("6", "eigenmodel symmetry", secs(60), eigenmodel_symmetry),
        judge("7", "FPCA recovery", secs(600), || {
            fpca_recovery(dir.path())
        }),
        judge("8", "diagnostics oracle", secs(10), diagnostics_oracle),
        judge("9", "determinism", secs(600), || determinism(dir.path())),
    ];
    for v in &verdicts {
        println!("{v}");
    }
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        verdicts.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
