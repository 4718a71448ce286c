use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::jets::JetError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("direction y must be nonzero")]
    ZeroDirection,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("|x| = {r} is outside the domain (radius {radius})")]
    OutsideDomain { r: f64, radius: f64 },
    #[error("x-derivatives of a spherically symmetric metric are not evaluated at the origin")]
    AtOrigin,
    #[error("metric `{metric}` is not positive at (r, u, v) = ({r}, {u}, {v}): F = {value}")]
    NonPositive { metric: String, r: f64, u: f64, v: f64, value: f64 },
    #[error("fundamental tensor is not positive definite here (not strongly convex)")]
    NotPositiveDefinite,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("invalid family: {0}")]
    Family(String),
    #[error("invalid rotation field ({i}, {j}) in dimension {n}")]
    InvalidField { i: usize, j: usize, n: usize },
    #[error("(r, u, v) = ({r}, {u}, {v}) is excluded: {reason}")]
    ExcludedPoint { r: f64, u: f64, v: f64, reason: &'static str },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
