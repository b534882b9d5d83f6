use crate::coef::CoefSolution;
use crate::cov::CovSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by estimation, data handling, and serialization.
///
/// The [`Error::kind`] method groups variants into the three coarse
/// categories the command line layer maps to exit codes: usage, data,
/// and numerical.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate date {date}: rows {first_row} and {second_row}")]
    DuplicateDate {
        date: String,
        first_row: usize,
        second_row: usize,
    },

    #[error("dates not increasing at row {row} ({date})")]
    NonMonotoneDate { row: usize, date: String },

    #[error("row {row}: missing or non-numeric value in column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("row {row}: non-finite value in column `{column}`")]
    NonFiniteValue { row: usize, column: String },

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("no convergence in {iterations} iterations: {context}")]
    NoConvergence { context: String, iterations: usize },

    #[error("coordinate descent did not converge after {sweeps} sweeps")]
    CoefNoConvergence {
        sweeps: usize,
        /// Last iterate, kept for diagnosis.
        last: Box<CoefSolution>,
    },

    #[error("covariance solver did not converge after {iterations} outer iterations")]
    CovNoConvergence {
        iterations: usize,
        /// Last iterate with its objective trace, kept for diagnosis.
        last: Box<CovSolution>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse category used to map errors to process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidSpec(_) | Error::DimensionMismatch(_) => ErrorKind::Usage,
            Error::EmptyInput(_)
            | Error::UnknownColumn(_)
            | Error::Parse { .. }
            | Error::DuplicateDate { .. }
            | Error::NonMonotoneDate { .. }
            | Error::MissingValue { .. }
            | Error::NonFiniteValue { .. }
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::NotPositiveDefinite(_)
            | Error::SingularDesign(_)
            | Error::NoConvergence { .. }
            | Error::CoefNoConvergence { .. }
            | Error::CovNoConvergence { .. }
            | Error::Degenerate(_) => ErrorKind::Numerical,
        }
    }
}
