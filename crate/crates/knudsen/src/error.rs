use thiserror::Error;

/// Failures raised by the numerical operators.
///
/// Variants are grouped by the exit-code class the CLI maps them to:
/// input problems, regime violations and numerical failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate ray: {0}")]
    DegenerateRay(String),

    #[error("shape violation: {0}")]
    ShapeViolation(String),

    #[error("omega = {omega} is not above the threshold 2^(-1/k0) = {threshold} for k0 = {k0}")]
    OmegaBelowThreshold { omega: f64, k0: u32, threshold: f64 },

    #[error("lambda = {lambda} exceeds the local-existence threshold {threshold}")]
    LambdaTooLarge { lambda: f64, threshold: f64 },

    #[error("implicit step mu = {mu} exceeds the admissible bound {bound}")]
    MuTooLarge { mu: f64, bound: f64 },

    #[error("kernel bound grows under refinement: {0}")]
    UnboundedKernel(String),

    #[error("series diverges: {0}")]
    SeriesDivergent(String),

    #[error("no convergence: {0}")]
    NonConvergent(String),

    #[error("Picard map is not contractive: {0}")]
    NonContractive(String),

    #[error("implicit inner map is not contractive: {0}")]
    InnerNonContractive(String),
}

impl Error {
    /// True for errors that signal a parameter outside a proven regime.
    pub fn is_regime_violation(&self) -> bool {
        matches!(
            self,
            Error::ShapeViolation(_)
                | Error::OmegaBelowThreshold { .. }
                | Error::LambdaTooLarge { .. }
                | Error::MuTooLarge { .. }
                | Error::UnboundedKernel(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
