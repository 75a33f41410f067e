//! Experiment runner for polar-expansion samplers: built-in demos, the
//! network eigenmodel, functional PCA and self-checks. Every command is
//! deterministic given its seed and writes figure-ready CSV plus a
//! run_meta.json echo of the resolved configuration.

pub mod args;
pub mod check;
pub mod config;
pub mod demo;
pub mod eigenmodel;
pub mod error;
pub mod fpca;
pub mod io;
pub mod runner;
pub mod synthetic;

use args::Command;
use config::{CheckConfig, DemoConfig, EigenmodelConfig, FpcaConfig};
use error::Result;

/// Runs one command and returns a one-line status for stdout.
pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Demo(a) => {
            let config = DemoConfig::resolve(a)?;
            let m = demo::run(&config)?;
            Ok(format!(
                "demo: {} draws, |mean Q| = {:.4e}, second-moment error = {:.4e}; wrote {}",
                m.draws,
                m.mean_norm,
                m.second_moment_error,
                config.out.display()
            ))
        }
        Command::Eigenmodel(a) => {
            let config = EigenmodelConfig::resolve(a)?;
            let out = eigenmodel::run(&config)?;
            Ok(format!(
                "eigenmodel: {} post-warmup divergences; wrote {}",
                out.report.divergences,
                config.out.display()
            ))
        }
        Command::Fpca(a) => {
            let config = FpcaConfig::resolve(a)?;
            let out = fpca::run(&config)?;
            Ok(format!(
                "fpca: {} post-warmup divergences; wrote {}",
                out.report.divergences,
                config.out.display()
            ))
        }
        Command::Check(a) => {
            let config = CheckConfig::resolve(a)?;
            let report = check::run(&config)?;
            let json = serde_json::to_string_pretty(&report).unwrap_or_default();
            match check::failure_error(&report) {
                Some(e) => {
                    println!("{json}");
                    Err(e)
                }
                None => Ok(json),
            }
        }
    }
}
