use qlimit_conic::{ConicError, SolveStatus};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("wavelength {wavelength_nm:.3} nm outside table range [{min_nm:.3}, {max_nm:.3}] nm")]
    OutOfRange {
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("solver did not certify a bound (status {status:?}, dual residual {dual_residual:e})")]
    SolverFailure { status: SolveStatus, dual_residual: f64 },

    #[error(transparent)]
    Conic(#[from] ConicError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
