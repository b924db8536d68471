use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("cylinder violation: grid point {point} left branch sequence at step {step}")]
    CylinderViolation { point: f64, step: usize },

    #[error("empty preimage at step {step}: {reason}")]
    EmptyPreimage { step: usize, reason: String },

    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("quadrature failure: row {row} defect {defect:e}")]
    Quadrature { row: usize, defect: f64 },

    #[error("mass defect {defect:e} exceeds tolerance")]
    MassDefect { defect: f64 },

    #[error("tail report carries no fitted index")]
    MissingTailFit,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("excess censoring: {censored} of {total} samples hit the cap")]
    ExcessCensoring { censored: usize, total: usize },

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> LabError {
    LabError::Domain(msg.into())
}
