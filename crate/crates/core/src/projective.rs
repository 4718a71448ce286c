//! Projectivity and flag curvature.
//!
//! A metric is projective iff `F_{xᵏyˡ} yᵏ = F_{xˡ}`; in `φ`-coordinates this reduces to
//! `φ_uv u + φ_ru v/(ru) = 0`. Its projective factor `P = F_{xᵏ}yᵏ / (2F)` equals
//! `Q / (2φ)` with `Q = (v/r)φ_r + u²φ_v`, and the metric has constant flag curvature
//! `λ` iff `P_{xᵏ} = P P_{yᵏ} − λ F F_{yᵏ}`. Contracting with `yᵏ` and using
//! `P_{yᵏ}yᵏ = P` gives the pointwise curvature `λ = (P² − P_{xᵏ}yᵏ) / F²`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jets::Jet;
use crate::metric::{relative_residual, Metric, MetricSample, SphericalMetric, R, U, V};

/// Default tolerance for Rapcsák and `φ`-space PDE residuals.
pub const PROJECTIVE_TOL: f64 = 1e-8;
/// Default tolerance on the spread of pointwise flag curvature.
pub const CURVATURE_TOL: f64 = 1e-6;
/// Curvature verdicts refuse to run above this Rapcsák residual.
pub const PROJECTIVITY_GATE: f64 = 1e-6;
/// Samples with `|v|` below this are skipped by the equivalence identities, which divide by `v`.
pub const SMALL_V: f64 = 1e-6;

fn require_r(r: f64, u: f64, v: f64) -> Result<()> {
    if r > 0.0 {
        Ok(())
    } else {
        Err(Error::ExcludedPoint { r, u, v, reason: "terms carry 1/r" })
    }
}

/// Per-component `F_{xᵏyˡ} yᵏ − F_{xˡ}`, divided by the largest per-component sum of
/// term magnitudes.
pub fn rapcsak_residual(metric: &Metric, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let f = metric.xy_jet(x, y, 2)?;
    let mut raw = Vec::with_capacity(n);
    let mut scale: f64 = 0.0;
    for l in 0..n {
        let terms: Vec<f64> = (0..n).map(|k| f.hess(k, n + l) * y[k]).chain([-f.grad(l)]).collect();
        raw.push(terms.iter().sum::<f64>());
        scale = scale.max(terms.iter().map(|t| t.abs()).sum());
    }
    Ok(raw.into_iter().map(|c| if scale == 0.0 { 0.0 } else { c.abs() / scale }).collect())
}

pub fn max_component(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, c| m.max(c.abs()))
}

/// Relative residuals of `φ_rv v/r + φ_vv u² = φ_r/r` and `φ_uv u + φ_ru v/(ru) = 0`.
pub fn projective_pde_residuals(metric: &SphericalMetric, r: f64, u: f64, v: f64) -> Result<(f64, f64)> {
    require_r(r, u, v)?;
    let j = metric.phi_jet(r, u, v, 2)?;
    let first = relative_residual(&[j.hess(R, V) * v / r, j.hess(V, V) * u * u, -j.grad(R) / r]);
    let second = relative_residual(&[j.hess(U, V) * u, j.hess(R, U) * v / (r * u)]);
    Ok((first, second))
}

/// Worst of the homogeneity identities `φ_rv = (φ_r − uφ_ru)/v` and `φ_vv = −uφ_uv/v`
/// that make the two projectivity equations equivalent.
pub fn pde_equivalence_residual(metric: &SphericalMetric, r: f64, u: f64, v: f64) -> Result<f64> {
    if v.abs() < SMALL_V {
        return Err(Error::ExcludedPoint { r, u, v, reason: "identities divide by v" });
    }
    let j = metric.phi_jet(r, u, v, 2)?;
    let a = relative_residual(&[j.hess(R, V) * v, -j.grad(R), u * j.hess(R, U)]);
    let b = relative_residual(&[j.hess(V, V) * v, u * j.hess(U, V)]);
    Ok(a.max(b))
}

/// `P = ((v/r)φ_r + u²φ_v) / (2φ)`.
pub fn projective_factor(metric: &SphericalMetric, r: f64, u: f64, v: f64) -> Result<f64> {
    require_r(r, u, v)?;
    let j = metric.phi_jet(r, u, v, 1)?;
    Ok((v / r * j.grad(R) + u * u * j.grad(V)) / (2.0 * j.value()))
}

/// `P = F_{xᵏ}yᵏ / (2F)` computed in `(x, y)` coordinates.
pub fn projective_factor_xy(metric: &Metric, x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    let f = metric.xy_jet(x, y, 1)?;
    let s: f64 = (0..n).map(|k| f.grad(k) * y[k]).sum();
    Ok(s / (2.0 * f.value()))
}

/// Jets of `φ` (order 2) and `Q = (v/r)φ_r + u²φ_v` (order 1) in `(r, u, v)`.
fn phi_and_q(metric: &SphericalMetric, r: f64, u: f64, v: f64) -> Result<(Jet, Jet)> {
    require_r(r, u, v)?;
    let phi = metric.phi_jet(r, u, v, 2)?;
    let rj = Jet::lift_var(R, r, 3, 1)?;
    let uj = Jet::lift_var(U, u, 3, 1)?;
    let vj = Jet::lift_var(V, v, 3, 1)?;
    let q = &(&vj.div(&rj)? * &phi.partial(R)?) + &(&uj.square() * &phi.partial(V)?);
    Ok((phi, q))
}

/// Pointwise flag curvature `λ = (P² − P_{xᵏ}yᵏ) / F²` with
/// `P_{xᵏ}yᵏ = P_r v/r + P_v u²`. Valid for projective metrics only.
pub fn flag_curvature(metric: &SphericalMetric, r: f64, u: f64, v: f64) -> Result<f64> {
    let (phi, q) = phi_and_q(metric, r, u, v)?;
    let p = q.div(&phi.truncate(1).scale(2.0))?;
    let p_x_y = p.grad(R) * v / r + p.grad(V) * u * u;
    let f = phi.value();
    Ok((p.value() * p.value() - p_x_y) / (f * f))
}

/// The same contraction evaluated in `(x, y)` coordinates.
pub fn flag_curvature_xy(metric: &Metric, x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    let (p, f) = projective_factor_jet(metric, x, y)?;
    let p_x_y: f64 = (0..n).map(|k| p.grad(k) * y[k]).sum();
    Ok((p.value() * p.value() - p_x_y) / (f * f))
}

/// `P` as an order-1 jet in `(x, y)`, plus `F`.
fn projective_factor_jet(metric: &Metric, x: &[f64], y: &[f64]) -> Result<(Jet, f64)> {
    let n = x.len();
    let f = metric.xy_jet(x, y, 2)?;
    let point: Vec<f64> = x.iter().chain(y).copied().collect();
    let vars = Jet::lift_all(&point, 1)?;
    let mut s = Jet::constant(0.0, 2 * n, 1);
    for k in 0..n {
        s = &s + &(&f.partial(k)? * &vars[n + k]);
    }
    let p = s.div(&f.truncate(1).scale(2.0))?;
    Ok((p, f.value()))
}

/// Worst component of `P_{xᵏ} − P P_{yᵏ} + λ F F_{yᵏ}` relative to its terms.
pub fn lemma_residual(metric: &Metric, x: &[f64], y: &[f64], lambda: f64) -> Result<f64> {
    let n = x.len();
    let (p, _) = projective_factor_jet(metric, x, y)?;
    let f = metric.xy_jet(x, y, 1)?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..n {
        let terms = [p.grad(k), -p.value() * p.grad(n + k), lambda * f.value() * f.grad(n + k)];
        worst = worst.max(terms.iter().sum::<f64>().abs());
        scale = scale.max(terms.iter().map(|t| t.abs()).sum());
    }
    Ok(if scale == 0.0 { 0.0 } else { worst / scale })
}

/// Relative residuals of both constant-curvature equations at `λ`:
///
/// ```text
/// 4λrφ⁴φ_u + rφ_uQ² − 4ruφφ_vQ + 4uφ²φ_r = 0
/// 4λrφ⁴φ_v + rφ_vQ² + 2φ²Q_r − 4φφ_rQ   = 0
/// ```
pub fn curvature_pde_residuals(metric: &SphericalMetric, r: f64, u: f64, v: f64, lambda: f64) -> Result<(f64, f64)> {
    let (phi, q) = phi_and_q(metric, r, u, v)?;
    let (p, pu, pv, pr) = (phi.value(), phi.grad(U), phi.grad(V), phi.grad(R));
    let (qv, qr) = (q.value(), q.grad(R));
    let p2 = p * p;
    let p4 = p2 * p2;
    let first = relative_residual(&[
        4.0 * lambda * r * p4 * pu,
        r * pu * qv * qv,
        -4.0 * r * u * p * pv * qv,
        4.0 * u * p2 * pr,
    ]);
    let second = relative_residual(&[4.0 * lambda * r * p4 * pv, r * pv * qv * qv, 2.0 * p2 * qr, -4.0 * p * pr * qv]);
    Ok((first, second))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureStatus {
    /// Rapcsák residual above the gate; curvature not evaluated.
    NotProjective,
    ConstantCurvature,
    NonConstantCurvature,
}

impl CurvatureStatus {
    pub fn label(self) -> &'static str {
        match self {
            CurvatureStatus::NotProjective => "not projective",
            CurvatureStatus::ConstantCurvature => "projective, constant curvature",
            CurvatureStatus::NonConstantCurvature => "projective, non-constant curvature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureTolerances {
    pub deviation: f64,
    pub pde: f64,
    pub gate: f64,
}

impl Default for CurvatureTolerances {
    fn default() -> Self {
        CurvatureTolerances { deviation: CURVATURE_TOL, pde: PROJECTIVE_TOL, gate: PROJECTIVITY_GATE }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureVerdict {
    pub status: CurvatureStatus,
    pub rapcsak_max: f64,
    /// Median pointwise curvature.
    pub lambda_estimate: f64,
    /// `max |λ(sample) − λ̂|`.
    pub max_deviation: f64,
    /// The `λ` the constant-curvature equations were evaluated at.
    pub lambda_tested: f64,
    /// Worst relative residual of each constant-curvature equation.
    pub residual_eq5: (f64, f64),
    pub samples_used: usize,
    /// Sample with the largest deviation or equation residual.
    pub worst_sample: Option<usize>,
    /// `|λ̂ − λ_hypothesis| ≤ tol`, when a hypothesis was given.
    pub hypothesis_ok: Option<bool>,
}

impl CurvatureVerdict {
    pub fn pass(&self) -> bool {
        self.status == CurvatureStatus::ConstantCurvature && self.hypothesis_ok != Some(false)
    }

    pub fn max_eq5(&self) -> f64 {
        self.residual_eq5.0.max(self.residual_eq5.1)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Decides whether a projective spherical metric has constant flag curvature on the
/// samples, optionally against a hypothesised constant.
pub fn constant_curvature_verdict(
    metric: &SphericalMetric,
    samples: &[MetricSample],
    hypothesis: Option<f64>,
    tol: CurvatureTolerances,
) -> Result<CurvatureVerdict> {
    let wrapped = Metric::Spherical(metric.clone());
    let rapcsak: Vec<f64> = samples
        .par_iter()
        .map(|s| rapcsak_residual(&wrapped, &s.x, &s.y).map(|r| max_component(&r)))
        .collect::<Result<_>>()?;
    let rapcsak_max = rapcsak.iter().fold(0.0, |m: f64, &c| m.max(c));
    if rapcsak_max > tol.gate {
        return Ok(CurvatureVerdict {
            status: CurvatureStatus::NotProjective,
            rapcsak_max,
            lambda_estimate: 0.0,
            max_deviation: f64::INFINITY,
            lambda_tested: hypothesis.unwrap_or(0.0),
            residual_eq5: (f64::INFINITY, f64::INFINITY),
            samples_used: 0,
            worst_sample: rapcsak.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i),
            hypothesis_ok: hypothesis.map(|_| false),
        });
    }
    let lambdas: Vec<f64> = samples.par_iter().map(|s| flag_curvature(metric, s.r, s.u, s.v)).collect::<Result<_>>()?;
    let lambda_estimate = median(&lambdas);
    let lambda_tested = hypothesis.unwrap_or(lambda_estimate);
    let eq5: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| curvature_pde_residuals(metric, s.r, s.u, s.v, lambda_tested))
        .collect::<Result<_>>()?;

    let mut max_deviation: f64 = 0.0;
    let mut residual_eq5 = (0.0f64, 0.0f64);
    let mut worst = (0.0f64, None);
    for (i, (l, e)) in lambdas.iter().zip(&eq5).enumerate() {
        let dev = (l - lambda_estimate).abs();
        max_deviation = max_deviation.max(dev);
        residual_eq5 = (residual_eq5.0.max(e.0), residual_eq5.1.max(e.1));
        let badness = (dev / tol.deviation).max(e.0.max(e.1) / tol.pde);
        if worst.1.is_none() || badness > worst.0 {
            worst = (badness, Some(i));
        }
    }
    let constant = max_deviation <= tol.deviation && residual_eq5.0.max(residual_eq5.1) <= tol.pde;
    Ok(CurvatureVerdict {
        status: if constant { CurvatureStatus::ConstantCurvature } else { CurvatureStatus::NonConstantCurvature },
        rapcsak_max,
        lambda_estimate,
        max_deviation,
        lambda_tested,
        residual_eq5,
        samples_used: samples.len(),
        worst_sample: worst.1,
        hypothesis_ok: hypothesis.map(|h| (lambda_estimate - h).abs() <= tol.deviation),
    })
}
