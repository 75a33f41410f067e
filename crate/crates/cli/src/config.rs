//! Option resolution: flags, then the TOML config file, then defaults. The
//! resolved structs are what each command runs on and what run_meta.json
//! echoes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use polar_expansion::hmc::HmcConfig;
use serde::{Deserialize, Serialize};

use crate::args::{CheckArgs, CommonArgs, DemoArgs, DemoKind, EigenmodelArgs, FpcaArgs, HmcArgs};
use crate::error::{CliError, Result};

pub const THREADS_ENV: &str = "POLAR_THREADS";
pub const DEFAULT_OUT: &str = "polar-out";

/// Keys accepted in a config file. Keys for other commands are allowed and
/// ignored so one file can drive several runs.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub samples: Option<usize>,
    pub target_accept: Option<f64>,
    pub max_leapfrog_steps: Option<usize>,
    pub kind: Option<DemoKind>,
    pub p: Option<usize>,
    pub k: Option<usize>,
    pub draws: Option<usize>,
    pub sigma: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub stride: Option<usize>,
    pub thin: Option<usize>,
    pub pc_multiple: Option<f64>,
    pub rho_prior_mean: Option<f64>,
    pub rho_prior_sd: Option<f64>,
    pub points: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
    }

    fn for_common(common: &CommonArgs) -> Result<Self> {
        common
            .config
            .as_deref()
            .map_or_else(|| Ok(Self::default()), Self::load)
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn out_dir(common: &CommonArgs, file: &FileConfig) -> PathBuf {
    pick(
        common.out.clone(),
        file.out.clone(),
        PathBuf::from(DEFAULT_OUT),
    )
}

fn hmc_config(hmc: &HmcArgs, seed: Option<u64>, file: &FileConfig) -> Result<HmcConfig> {
    let d = HmcConfig::default();
    let config = HmcConfig {
        chains: pick(hmc.chains, file.chains, d.chains),
        warmup_iters: pick(hmc.warmup, file.warmup, d.warmup_iters),
        sample_iters: pick(hmc.samples, file.samples, d.sample_iters),
        target_accept: pick(hmc.target_accept, file.target_accept, d.target_accept),
        max_leapfrog_steps: pick(
            hmc.max_leapfrog_steps,
            file.max_leapfrog_steps,
            d.max_leapfrog_steps,
        ),
        seed: pick(seed, file.seed, d.seed),
        ..d
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn required_data(flag: &Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    flag.clone().or_else(|| file.data.clone()).ok_or_else(|| {
        CliError::Usage("no input data: pass a CSV path or set `data` in the config file".into())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoConfig {
    pub kind: DemoKind,
    pub p: usize,
    pub k: usize,
    pub draws: usize,
    pub seed: u64,
    pub sigma: Option<PathBuf>,
    pub out: PathBuf,
}

impl DemoConfig {
    pub fn resolve(args: &DemoArgs) -> Result<Self> {
        let file = FileConfig::for_common(&args.common)?;
        let kind = pick(args.kind, file.kind, DemoKind::Stiefel);
        let p = pick(args.p, file.p, 3);
        let k = if kind == DemoKind::Sphere {
            1
        } else {
            pick(args.k, file.k, 1)
        };
        if kind == DemoKind::Sphere && args.k.is_some_and(|k| k != 1) {
            return Err(CliError::Usage("sphere draws have k = 1".into()));
        }
        if p == 0 || k == 0 || k > p {
            return Err(CliError::Usage(format!(
                "need 1 <= k <= p, got p = {p}, k = {k}"
            )));
        }
        let sigma = args.sigma.clone().or(file.sigma.clone());
        if sigma.is_some() && kind != DemoKind::Macg {
            return Err(CliError::Usage(
                "--sigma applies only to the macg demo".into(),
            ));
        }
        let draws = pick(args.draws, file.draws, 10_000);
        if draws == 0 {
            return Err(CliError::Usage("draws must be positive".into()));
        }
        Ok(Self {
            kind,
            p,
            k,
            draws,
            seed: pick(args.common.seed, file.seed, 0),
            sigma,
            out: out_dir(&args.common, &file),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenmodelConfig {
    pub data: PathBuf,
    pub k: usize,
    pub hmc: HmcConfig,
    pub out: PathBuf,
}

impl EigenmodelConfig {
    pub fn resolve(args: &EigenmodelArgs) -> Result<Self> {
        let file = FileConfig::for_common(&args.common)?;
        let k = pick(args.k, file.k, 3);
        if k == 0 {
            return Err(CliError::Usage("k must be positive".into()));
        }
        Ok(Self {
            data: required_data(&args.data, &file)?,
            k,
            hmc: hmc_config(&args.hmc, args.common.seed, &file)?,
            out: out_dir(&args.common, &file),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpcaConfig {
    pub data: PathBuf,
    pub k: usize,
    pub stride: usize,
    pub thin: usize,
    /// None means 2 x posterior mean d_j / sqrt(n) per component.
    pub pc_multiple: Option<f64>,
    pub rho_prior_mean: f64,
    pub rho_prior_sd: f64,
    pub hmc: HmcConfig,
    pub out: PathBuf,
}

impl FpcaConfig {
    pub fn resolve(args: &FpcaArgs) -> Result<Self> {
        let file = FileConfig::for_common(&args.common)?;
        let k = pick(args.k, file.k, 3);
        let stride = pick(args.stride, file.stride, 1);
        let thin = pick(args.thin, file.thin, 10);
        if k == 0 || stride == 0 || thin == 0 {
            return Err(CliError::Usage(
                "k, stride and thin must be positive".into(),
            ));
        }
        let pc_multiple = args.pc_multiple.or(file.pc_multiple);
        if pc_multiple.is_some_and(|m| !m.is_finite()) {
            return Err(CliError::Usage("pc_multiple must be finite".into()));
        }
        Ok(Self {
            data: required_data(&args.data, &file)?,
            k,
            stride,
            thin,
            pc_multiple,
            rho_prior_mean: pick(args.rho_prior_mean, file.rho_prior_mean, 365.0 / (4.0 * PI)),
            rho_prior_sd: pick(args.rho_prior_sd, file.rho_prior_sd, 5.0),
            hmc: hmc_config(&args.hmc, args.common.seed, &file)?,
            out: out_dir(&args.common, &file),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckConfig {
    pub points: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl CheckConfig {
    pub fn resolve(args: &CheckArgs) -> Result<Self> {
        let file = FileConfig::for_common(&args.common)?;
        let points = pick(args.points, file.points, 20);
        if points == 0 {
            return Err(CliError::Usage("points must be positive".into()));
        }
        Ok(Self {
            points,
            seed: pick(args.common.seed, file.seed, 0),
            out: out_dir(&args.common, &file),
        })
    }
}

/// Worker cap for chain parallelism: POLAR_THREADS if set, else one worker
/// per chain.
pub fn thread_cap(chains: usize) -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(chains.max(1)),
    }
}
