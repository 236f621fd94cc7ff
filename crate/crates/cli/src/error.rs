use thiserror::Error;

/// CLI-level errors; each category maps to a distinct exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("enumeration budget exceeded: {0}")]
    Enumeration(String),

    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Model(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Enumeration(_) => 6,
            CliError::Io(_) => 7,
        }
    }
}

impl From<finite_team::FiniteError> for CliError {
    fn from(e: finite_team::FiniteError) -> Self {
        use finite_team::FiniteError as F;
        match e {
            F::InvalidInput(m) => CliError::Config(m),
            F::InvalidModel(m) => CliError::Model(m),
            F::EnumerationBound { .. } => CliError::Enumeration(e.to_string()),
            F::UnsupportedDiscount { .. } | F::NoConvergence { .. } => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

impl From<lq_team::LqError> for CliError {
    fn from(e: lq_team::LqError) -> Self {
        use lq_team::LqError as L;
        match e {
            L::InvalidInput(m) => CliError::Config(m),
            L::Dimension(m) | L::InvalidModel(m) => CliError::Model(m),
            L::AssumptionViolated(_)
            | L::Diverged { .. }
            | L::UnstableClosedLoop { .. }
            | L::NoConvergence { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
