//! Error type shared across the engine.

use crate::estimation::ThetaEstimate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A covariate vector does not have the arity the stratification schema expects.
    #[error("covariate vector has {found} entries, schema expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },

    /// A discrete covariate carries a value outside its declared level range.
    #[error("covariate {index} has value {value}, not a level code below {levels}")]
    LevelOutOfRange {
        index: usize,
        value: f64,
        levels: usize,
    },

    /// A configuration or argument value is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The dataset cannot support the requested computation.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// An arm required by the analysis has no patients.
    #[error("arm {arm} has no patients")]
    EmptyArm { arm: usize },

    /// The estimating-equation solver did not reach the residual tolerance.
    /// Carries the last iterate so callers can inspect how the fit failed.
    #[error(
        "estimating equation did not converge after {iterations} iterations \
         (scaled residual {residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Box<ThetaEstimate>,
    },

    /// An effect-scale transform was evaluated outside its domain.
    #[error("effect metric domain violation: {0}")]
    Domain(String),

    /// A variance estimate is nonpositive or otherwise unusable for a test.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
}

pub type Result<T> = std::result::Result<T, Error>;
