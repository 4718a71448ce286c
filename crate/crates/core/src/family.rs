//! The projective family `φ(r, u, v) = ∫₀ᵘ f(v²/t² − r²) dt + g(r)·v [+ h(r)·|v|]`.
//!
//! Pure `(r, v)` derivatives of the integral are obtained by integrating a jet-valued
//! integrand. Every derivative involving `u` comes from `φ_u = f(v²/u² − r²)` exactly,
//! so the quadrature mesh is never differentiated.

use std::fmt;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jets::Jet;
use crate::metric::{PhiSource, SphericalMetric, R, U, V};
use crate::quadrature::{integrate, QuadratureOptions};

/// Points of the positivity/decay grid, log-spaced over `[1e-3, 1e6]`.
pub const DECAY_GRID_POINTS: usize = 50;

/// Growth of `max_k s^k |f⁽ᵏ⁾(s)|` over the top two grid decades must stay below
/// this fraction of `√s` growth for the `t → 0⁺` end of the integral to converge.
const DECAY_RATIO_LIMIT: f64 = 0.9;

#[derive(Debug, Clone)]
pub enum Baseline {
    /// `c(r, v) = g(r)·v`.
    Plain,
    /// `c(r, v) = g(r)·v + h(r)·|v|`.
    AbsCorrected(Expr),
}

#[derive(Debug, Clone)]
pub struct ProjectiveFamilySpec {
    /// `f(t)`, positive.
    pub f: Expr,
    /// `g(r)`; `None` means 0.
    pub g: Option<Expr>,
    pub baseline: Baseline,
    pub quad: QuadratureOptions,
    /// Sup of admissible `|x|`; `f` must be positive on `[−R², ∞)`.
    pub domain_radius: f64,
}

impl ProjectiveFamilySpec {
    /// Parses `f` in `t` and `g`, `h` in `r`. A present `h` selects the
    /// `abs_corrected` baseline.
    pub fn parse(f: &str, g: Option<&str>, h: Option<&str>) -> Result<Self> {
        Ok(ProjectiveFamilySpec {
            f: Expr::parse(f, &["t"])?,
            g: g.map(|s| Expr::parse(s, &["r"])).transpose()?,
            baseline: match h {
                Some(h) => Baseline::AbsCorrected(Expr::parse(h, &["r"])?),
                None => Baseline::Plain,
            },
            quad: QuadratureOptions::default(),
            domain_radius: 1.0,
        })
    }

    pub fn with_quadrature(mut self, quad: QuadratureOptions) -> Self {
        self.quad = quad;
        self
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Self {
        self.domain_radius = radius;
        self
    }

    /// Checks `f > 0` on the sampled argument range and that the integral
    /// converges at `t → 0⁺`.
    pub fn validate(&self) -> Result<()> {
        let f = |s: f64| {
            self.f.derivatives_at("t", s).map_err(|e| Error::Family(format!("f cannot be evaluated at t = {s}: {e}")))
        };
        let r_max = (0.95 * self.domain_radius).min(2.0);
        for k in 0..=10 {
            let s = -r_max * r_max * k as f64 / 10.0;
            let d = f(s)?;
            if !(d[0] > 0.0) {
                return Err(Error::Family(format!("f({s}) = {} is not positive", d[0])));
            }
        }
        let grid: Vec<f64> = (0..DECAY_GRID_POINTS)
            .map(|k| 10f64.powf(-3.0 + 9.0 * k as f64 / (DECAY_GRID_POINTS - 1) as f64))
            .collect();
        let mut growth = Vec::with_capacity(grid.len());
        for &s in &grid {
            let d = f(s)?;
            if !(d[0] > 0.0) {
                return Err(Error::Family(format!("f({s:e}) = {} is not positive", d[0])));
            }
            let envelope = (0..4).map(|k| s.powi(k as i32) * d[k].abs()).fold(0.0, f64::max);
            growth.push(envelope / s.sqrt());
        }
        // two decades below the top of the grid
        let lower_idx = DECAY_GRID_POINTS - 1 - 2 * (DECAY_GRID_POINTS - 1) / 9;
        let (lower, s_lower) = (growth[lower_idx], grid[lower_idx]);
        let top = growth[DECAY_GRID_POINTS - 1];
        if lower > 0.0 && top > DECAY_RATIO_LIMIT * lower {
            return Err(Error::Family(format!(
                "f decays too slowly for the integral to converge at t -> 0: \
                 s^k |f^(k)(s)| / sqrt(s) goes from {lower:e} at s = {s_lower:.3e} to {top:e} at s = 1e6"
            )));
        }
        Ok(())
    }
}

/// A validated family, ready to evaluate.
#[derive(Debug, Clone)]
pub struct ProjectiveFamily {
    spec: ProjectiveFamilySpec,
}

impl fmt::Display for ProjectiveFamily {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(out, "family(f = {}", self.spec.f)?;
        if let Some(g) = &self.spec.g {
            write!(out, ", g = {g}")?;
        }
        if let Baseline::AbsCorrected(h) = &self.spec.baseline {
            write!(out, ", h = {h}")?;
        }
        write!(out, ")")
    }
}

impl ProjectiveFamily {
    pub fn new(spec: ProjectiveFamilySpec) -> Result<Self> {
        spec.validate()?;
        Ok(ProjectiveFamily { spec })
    }

    pub fn spec(&self) -> &ProjectiveFamilySpec {
        &self.spec
    }

    /// Jet of `∫₀ᵘ f(v²/t² − r²) dt` in `(r, u, v)`.
    pub fn integral_jet(&self, r: f64, u: f64, v: f64, order: usize) -> Result<Jet> {
        integral_jet(&self.spec, r, u, v, order)
    }

    /// Jet of the full `φ`, baseline included.
    pub fn phi_jet(&self, r: f64, u: f64, v: f64, order: usize) -> Result<Jet> {
        let integral = self.integral_jet(r, u, v, order)?;
        let rj = Jet::lift_var(R, r, 3, order)?;
        let vj = Jet::lift_var(V, v, 3, order)?;
        let mut phi = integral;
        if let Some(g) = &self.spec.g {
            phi = &phi + &(&g.eval(&[("r", &rj)])? * &vj);
        }
        if let Baseline::AbsCorrected(h) = &self.spec.baseline {
            if v == 0.0 {
                return Err(Error::ExcludedPoint { r, u, v, reason: "|v| is not differentiable at v = 0" });
            }
            phi = &phi + &(&h.eval(&[("r", &rj)])? * &vj.abs()?);
        }
        Ok(phi)
    }
}

/// Jet of `∫₀ᵘ f(v²/t² − r²) dt` in `(r, u, v)` up to `order`.
///
/// Derivatives free of `u` are integrals of `(r, v)`-jets of the integrand;
/// the rest are derivatives of `φ_u = f(v²/u² − r²)`.
pub fn integral_jet(spec: &ProjectiveFamilySpec, r: f64, u: f64, v: f64, order: usize) -> Result<Jet> {
    if !(u > 0.0) {
        return Err(Error::ZeroDirection);
    }
    if order > 3 {
        return Err(crate::jets::JetError::OrderTooHigh(order).into());
    }
    let ncomp = Jet::constant(0.0, 2, order).components().len();
    let integrand = |t: f64| -> Result<Vec<f64>> {
        let inv_t2 = 1.0 / (t * t);
        let s = v * v * inv_t2 - r * r;
        // s as a jet in (r, v)
        let mut sj = Jet::constant(s, 2, order);
        if order >= 1 {
            sj.set_grad(0, -2.0 * r);
            sj.set_grad(1, 2.0 * v * inv_t2);
        }
        if order >= 2 {
            sj.set_hess(0, 0, -2.0);
            sj.set_hess(1, 1, 2.0 * inv_t2);
        }
        let d = univariate_derivatives(&spec.f, s, order)?;
        Ok(sj.compose(d).components())
    };
    let rv = integrate(integrand, 0.0, u, ncomp, spec.quad)?;
    let rv = Jet::from_components(2, order, &rv);

    // φ_u = f(s) with s = v²/u² − r², as a jet in (r, u, v)
    let fu = if order >= 1 {
        let rj = Jet::lift_var(R, r, 3, order - 1)?;
        let uj = Jet::lift_var(U, u, 3, order - 1)?;
        let vj = Jet::lift_var(V, v, 3, order - 1)?;
        let s = &v_over_u_sq(&vj, &uj)? - &rj.square();
        Some(spec.f.eval(&[("t", &s)])?)
    } else {
        None
    };

    let map = |idx: usize| if idx == R { 0 } else { 1 };
    let mut out = Jet::constant(rv.value(), 3, order);
    if let Some(fu) = &fu {
        for a in 0..3 {
            out.set_grad(a, if a == U { fu.value() } else { rv.grad(map(a)) });
        }
        if order >= 2 {
            for b in 0..3 {
                for a in 0..=b {
                    let x = if a == U {
                        fu.grad(b)
                    } else if b == U {
                        fu.grad(a)
                    } else {
                        rv.hess(map(a), map(b))
                    };
                    out.set_hess(a, b, x);
                }
            }
        }
        if order >= 3 {
            for c in 0..3 {
                for b in 0..=c {
                    for a in 0..=b {
                        let idx = [a, b, c];
                        let x = match idx.iter().position(|&i| i == U) {
                            Some(pos) => {
                                let rest: Vec<usize> =
                                    idx.iter().enumerate().filter(|(p, _)| *p != pos).map(|(_, &i)| i).collect();
                                fu.hess(rest[0], rest[1])
                            }
                            None => rv.third(map(a), map(b), map(c)),
                        };
                        out.set_third(a, b, c, x);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn v_over_u_sq(v: &Jet, u: &Jet) -> Result<Jet> {
    Ok(v.div(u)?.square())
}

fn univariate_derivatives(f: &Expr, s: f64, order: usize) -> Result<[f64; 4]> {
    let t = Jet::lift_var(0, s, 1, order)?;
    let j = f.eval(&[("t", &t)])?;
    Ok([j.value(), j.grad(0), j.hess(0, 0), j.third(0, 0, 0)])
}

/// Builds the spherical metric of a family spec after validating it.
pub fn build_projective_metric(spec: ProjectiveFamilySpec, name: &str) -> Result<SphericalMetric> {
    let domain_radius = spec.domain_radius;
    let family = ProjectiveFamily::new(spec)?;
    // spot-check positivity away from v = 0
    let r0 = (0.5 * domain_radius).min(1.0);
    for &(u, v) in &[(1.0, 0.5 * r0), (1.0, -0.5 * r0), (0.3, 0.1 * r0)] {
        let value = family.phi_jet(r0, u, v, 0)?.value();
        if !(value > 0.0) {
            return Err(Error::NonPositive { metric: name.to_string(), r: r0, u, v, value });
        }
    }
    Ok(SphericalMetric {
        name: name.to_string(),
        source: PhiSource::Family(Box::new(family)),
        domain_radius,
        params: Default::default(),
        expected_k: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn funk_spec() -> ProjectiveFamilySpec {
        ProjectiveFamilySpec::parse("1/sqrt(1+t)", Some("1/(1-r^2)"), Some("1/(1-r^2)")).unwrap()
    }

    #[test]
    fn constant_integrand_recovers_u() {
        let spec = ProjectiveFamilySpec::parse("1", None, None).unwrap();
        let j = integral_jet(&spec, 0.4, 1.3, 0.2, 2).unwrap();
        assert!((j.value() - 1.3).abs() < 1e-14);
        assert_eq!(j.grad(U), 1.0);
    }

    #[test]
    fn funk_integrand_closed_form() {
        let spec = funk_spec();
        let j = integral_jet(&spec, 0.5, 1.0, 0.5, 3).unwrap();
        assert!((j.value() - 2.0 / 3.0).abs() < 1e-12, "{}", j.value());
        assert!((j.grad(U) - 1.0).abs() < 1e-15);
        // antiderivative (√(u²(1−r²)+v²) − |v|)/(1−r²): compare derivatives by finite differences
        let closed = |r: f64, u: f64, v: f64| ((u * u * (1.0 - r * r) + v * v).sqrt() - v.abs()) / (1.0 - r * r);
        let h = 1e-5;
        let fd_r = (closed(0.5 + h, 1.0, 0.5) - closed(0.5 - h, 1.0, 0.5)) / (2.0 * h);
        let fd_v = (closed(0.5, 1.0, 0.5 + h) - closed(0.5, 1.0, 0.5 - h)) / (2.0 * h);
        assert!((j.grad(R) - fd_r).abs() < 1e-8, "{} vs {fd_r}", j.grad(R));
        assert!((j.grad(V) - fd_v).abs() < 1e-8, "{} vs {fd_v}", j.grad(V));
    }

    #[test]
    fn funk_reconstruction() {
        let m = build_projective_metric(funk_spec(), "funk-family").unwrap();
        let phi = m.phi(0.5, 1.0, 0.5).unwrap();
        assert!((phi - 2.0).abs() < 1e-12, "{phi}");
    }

    #[test]
    fn plain_baseline_is_reversible() {
        let spec = ProjectiveFamilySpec::parse("1/sqrt(1+t)", None, None).unwrap();
        let m = build_projective_metric(spec, "even").unwrap();
        let (a, b) = (m.phi(0.3, 1.0, 0.2).unwrap(), m.phi(0.3, 1.0, -0.2).unwrap());
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_f() {
        assert!(matches!(
            ProjectiveFamily::new(ProjectiveFamilySpec::parse("1 + t^2", None, None).unwrap()),
            Err(Error::Family(_))
        ));
        assert!(matches!(
            ProjectiveFamily::new(ProjectiveFamilySpec::parse("sqrt(1+t)", None, None).unwrap()),
            Err(Error::Family(_))
        ));
        assert!(matches!(
            ProjectiveFamily::new(ProjectiveFamilySpec::parse("t", None, None).unwrap()),
            Err(Error::Family(_))
        ));
        assert!(ProjectiveFamily::new(ProjectiveFamilySpec::parse("1/(1+t^2)", None, None).unwrap()).is_ok());
    }

    #[test]
    fn abs_baseline_refuses_v_zero() {
        let m = build_projective_metric(funk_spec(), "funk-family").unwrap();
        assert!(matches!(m.phi_jet(0.5, 1.0, 0.0, 1), Err(Error::ExcludedPoint { .. })));
    }
}
