//! Numerical verification toolkit for spherically symmetric Finsler metrics
//! `F(x, y) = φ(|x|, |y|, ⟨x, y⟩)` on convex domains of R^n.
//!
//! Metrics come from a builtin zoo, from formulas, or from the projective integral
//! family. Every check is a residual evaluated with forward-mode jets: rotational
//! Killing equations, convexity of the fundamental tensor, the projectivity
//! equations, and the constant flag curvature conditions.

// `!(a < b)` comparisons deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expr;
pub mod family;
pub mod geodesics;
pub mod jets;
pub mod metric;
pub mod projective;
pub mod quadrature;
pub mod runner;
pub mod sampling;
pub mod symmetry;

pub use error::{Error, Result};
pub use jets::Jet;
pub use metric::{Builtin, GeneralMetric, Metric, MetricSample, SphericalMetric};
