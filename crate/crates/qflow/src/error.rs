//! Crate-wide error type.
//!
//! Shape mismatches between arrays are programmer errors and panic with the
//! offending op and shapes; everything that can fail at run time on valid
//! shapes (numeric blow-up, off-grid times, non-SPD inputs, bad configs)
//! goes through [`Error`].

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A value that must be finite was NaN or infinite.
    NonFinite { context: String },
    /// An integration endpoint was not a knot of the supplied grid.
    OffGrid { t: f64 },
    /// A trajectory was paired with a grid it was not produced on.
    GridMismatch { expected: usize, got: usize },
    /// A matrix required to be symmetric positive definite was not.
    NotSpd { context: String },
    /// Two point sets that must align in length did not.
    LengthMismatch { context: String, left: usize, right: usize },
    /// A configuration or argument failed validation.
    Invalid { context: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
            Error::OffGrid { t } => write!(f, "time {t} is not a knot of the grid"),
            Error::GridMismatch { expected, got } => {
                write!(f, "trajectory/grid mismatch: grid expects {expected} fine states, trajectory has {got}")
            }
            Error::NotSpd { context } => write!(f, "matrix is not SPD: {context}"),
            Error::LengthMismatch { context, left, right } => {
                write!(f, "length mismatch in {context}: {left} vs {right}")
            }
            Error::Invalid { context } => write!(f, "invalid argument: {context}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite { context: context.into() }
    }

    pub fn invalid(context: impl Into<String>) -> Self {
        Error::Invalid { context: context.into() }
    }
}
