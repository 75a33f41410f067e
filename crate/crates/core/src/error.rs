use thiserror::Error;

/// Errors raised by the numerical kernels, samplers and models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("SVD failed to converge")]
    SvdNonConvergence,

    /// Smallest singular value too small relative to the largest.
    #[error(
        "degenerate input: singular value ratio d_k/d_1 = {ratio:.3e} is below tolerance {tol:.1e}"
    )]
    Degenerate { ratio: f64, tol: f64 },

    #[error("ill-conditioned matrix: eigenvalue ratio {ratio:.3e} is below tolerance {tol:.1e}")]
    IllConditioned { ratio: f64, tol: f64 },

    #[error("matrix is not positive definite{}", hint.as_ref().map(|h| format!(" ({h})")).unwrap_or_default())]
    NotPositiveDefinite { hint: Option<String> },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("sampler initialization failed: {0}")]
    Initialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
