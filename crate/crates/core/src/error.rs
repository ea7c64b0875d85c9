use thiserror::Error;

/// Errors raised by the precision design pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Inputs violate a documented shape or value precondition.
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical routine broke down (singular matrix, no convergence, failed verification).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// The requested error budget cannot be met by any precision assignment.
    #[error("infeasible error budget: {0}")]
    InfeasibleBudget(String),
    /// The retained sensor set violates the detectability/stabilizability assumption.
    #[error("detectability error: {0}")]
    Detectability(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn numerical<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numerical(msg.into()))
}
