//! Scenario files, orchestration of the solvers and machine-readable run
//! artifacts. The `knudsen` binary is a thin argument parser over this
//! module.

mod report;
mod run;
mod scenario;
mod validate;

pub use report::{emit_report, Measurement, Report};
pub use run::{
    run_scenario, spectral_report, CheckTotals, Manifest, RegimeCheck, RunOptions, RunStatus, SpectralCliReport,
    StepRecord,
};
pub use scenario::{
    DomainSpec, GridSpec, InitialKind, InitialSpec, ModelSpec, PlanSpec, Scenario, SolverKnobs, Step, TransportMode,
    TransportSpec, VelocitySpec,
};
pub use validate::{run_suite, ValidationItem, ValidationReport};

use crate::error::Error;

/// Failures of a CLI invocation, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or inconsistent configuration (exit 2).
    #[error("config error: {0}")]
    Config(String),
    /// A required artifact is absent (exit 2).
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    /// A parameter lies outside a proven regime (exit 3).
    #[error("regime violation: {0}")]
    Regime(String),
    /// A solver failed to converge or an operator broke down (exit 4).
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingArtifact(_) => 2,
            CliError::Regime(_) => 3,
            CliError::Numerical(_) | CliError::Io(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(m) => CliError::Config(m),
            e if e.is_regime_violation() => CliError::Regime(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Numerical(format!("json: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::InvalidInput("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::LambdaTooLarge { lambda: 1.0, threshold: 0.5 }).exit_code(), 3);
        assert_eq!(CliError::from(Error::MuTooLarge { mu: 1.0, bound: 0.5 }).exit_code(), 3);
        assert_eq!(CliError::from(Error::NonConvergent("x".into())).exit_code(), 4);
        assert_eq!(CliError::from(Error::SeriesDivergent("x".into())).exit_code(), 4);
        assert_eq!(CliError::MissingArtifact("manifest.json".into()).exit_code(), 2);
    }
}
