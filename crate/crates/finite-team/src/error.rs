use thiserror::Error;

/// Errors produced by the finite-team machinery.
#[derive(Debug, Error)]
pub enum FiniteError {
    /// An input symbol, index or count is outside its valid range.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A model definition violates one of its invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An exact enumeration would exceed the configured term budget.
    #[error("enumeration bound exceeded: {terms} terms (budget {budget})")]
    EnumerationBound { terms: u128, budget: usize },

    /// The requested solver only supports discount factors strictly below one.
    #[error("unsupported discount factor {beta}: exact planning requires beta < 1")]
    UnsupportedDiscount { beta: f64 },

    /// An iterative solver did not reach its stopping criterion.
    #[error("no convergence after {iterations} iterations (last gap {gap:.3e})")]
    NoConvergence { iterations: usize, gap: f64 },
}

pub type Result<T> = std::result::Result<T, FiniteError>;
