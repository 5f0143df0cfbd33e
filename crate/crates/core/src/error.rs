use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid driving system: {0}")]
    InvalidDriving(String),

    #[error("fiber index {index} outside the materialized window [-{radius}, {radius}]")]
    OutOfWindow { index: i64, radius: i64 },

    #[error("invalid map parameters: {0}")]
    InvalidMap(String),

    #[error("point {0} lies outside [-1, 1]")]
    OutOfDomain(f64),

    #[error("grid size {0} is invalid (must be even and >= 2)")]
    InvalidGrid(usize),

    #[error("grid mismatch: operator has {expected} cells, density has {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("zero denominator: averaged leak rates sum to zero")]
    ZeroDenominator,

    #[error("epsilon {epsilon} is not admissible: transition diagonal would be {diagonal}")]
    InadmissibleEpsilon { epsilon: f64, diagonal: f64 },

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("series truncation not certified within the window: need about {required} terms, have {available}")]
    TruncationNotCertified { required: usize, available: usize },

    #[error("averaged leak matrix is singular ({zero_diagonals} zero diagonal entries)")]
    SingularDelta { zero_diagonals: usize },

    #[error("kernel dimension is {0}, expected 1")]
    KernelDimension(usize),

    #[error("sign of the second function is undetermined (mass on I_L = {0:e})")]
    SignUndetermined(f64),

    #[error("invalid run: {0}")]
    InvalidRun(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
