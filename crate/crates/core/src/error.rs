use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("abscissa {x} lies outside [0, pi]")]
    Domain { x: f64 },

    #[error("invalid integration bounds [{a}, {b}]")]
    Bounds { a: f64, b: f64 },

    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: &'static str, detail: String },

    #[error("eigenvalue certification failed for n = {n}: phase count gives {found} nodes")]
    Certification { n: usize, found: usize },

    #[error("no sign change of the miss-distance bracketed for n = {n}")]
    Bracket { n: usize },

    #[error("inconsistent nodal data: {0}")]
    Inconsistent(String),

    #[error("level n = {n} is missing from the nodal set")]
    MissingLevel { n: usize },

    #[error("difference quotient divides by zero at index {index}")]
    DivisionByZero { index: usize },

    #[error("insufficient data: need {needed}, have {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("expected a case (I) nodal set, got {0}")]
    CaseMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
