//! The two applications built on the expansion: a probit network eigenmodel
//! and Bayesian functional PCA.

pub mod align;
pub mod eigenmodel;
pub mod fpca;

pub use align::{align_eigen_draws, align_svd_draws, EigenDraw, SvdDraw};
pub use eigenmodel::{
    eigenmodel_target, simulate_eigenmodel, EigenmodelData, EigenmodelParams, EigenmodelTarget,
};
pub use fpca::{
    fpca_empirical_bayes, fpca_point_estimate_v, fpca_target, simulate_fpca, FpcaData, FpcaHyper,
    FpcaParams, FpcaTarget, FpcaTruth, RhoPrior, RunningMean, SimulatedFpca,
};
