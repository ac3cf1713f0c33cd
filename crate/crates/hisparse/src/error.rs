//! Error type shared across the crate.

use std::fmt;

/// Errors produced by hierarchy, operator, projection, recovery and
/// certification routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix dimension does not match what the operation expects.
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    /// A support is nested deeper than the hierarchy it is checked against.
    LevelMismatch { spec_levels: usize, support_depth: usize },
    /// Invalid hierarchy or ensemble parameters (zero dims, s > n, ...).
    InvalidSpec(String),
    /// A support violates structural rules (unsorted, duplicate or
    /// out-of-range indices).
    InvalidSupport(String),
    /// An enumeration or materialization would exceed the configured budget.
    /// Refusal, not truncation: a truncated maximum is not a certificate.
    BudgetExceeded { required: u128, budget: u128 },
    /// A NaN or infinity was encountered where finite values are required.
    NonFinite { context: String },
    /// A scalar argument lies outside its admissible interval.
    DomainError(String),
    /// Malformed matrix file or unparsable input.
    Parse(String),
    /// Underlying I/O failure, with the offending path.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got, context } => {
                write!(f, "{context}: dimension mismatch (expected {expected}, got {got})")
            }
            Error::LevelMismatch { spec_levels, support_depth } => write!(
                f,
                "support nesting depth {support_depth} exceeds hierarchy with {spec_levels} levels"
            ),
            Error::InvalidSpec(msg) => write!(f, "invalid spec: {msg}"),
            Error::InvalidSupport(msg) => write!(f, "invalid support: {msg}"),
            Error::BudgetExceeded { required, budget } => write!(
                f,
                "refused: {required} supports/entries required, budget is {budget}"
            ),
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
            Error::DomainError(msg) => write!(f, "domain error: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
