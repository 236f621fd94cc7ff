use thiserror::Error;

/// Errors produced by the LQ team machinery.
#[derive(Debug, Error)]
pub enum LqError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("trajectory diverged at step {step} (state norm beyond {threshold:.1e})")]
    Diverged { step: usize, threshold: f64 },

    #[error("closed loop unstable (spectral radius {spectral_radius:.6})")]
    UnstableClosedLoop { spectral_radius: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, LqError>;
