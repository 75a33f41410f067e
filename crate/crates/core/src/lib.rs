//! Polar expansion for Stiefel-manifold MCMC: a density on V(k, p) is
//! sampled by running Hamiltonian Monte Carlo on an unconstrained p×k matrix
//! X whose polar factor Q_X carries the target law.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod expansion;
pub mod hmc;
pub mod matcore;
pub mod models;
pub mod par;
pub mod quadrature;
pub mod special;
pub use error::{Error, Result};
