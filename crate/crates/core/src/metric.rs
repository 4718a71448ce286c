//! Spherically symmetric metrics `F(x, y) = φ(|x|, |y|, ⟨x, y⟩)`, general `F(x, y)`
//! metrics, and the pointwise quantities built from them: the fundamental tensor,
//! its determinant, convexity, homogeneity and reversibility diagnostics.
//!
//! Jets of `φ` live in the three variables `(r, u, v)` (indices [`R`], [`U`], [`V`]).
//! Derivatives in `(x, y)` are produced from them by the chain rule through
//! `r = |x|`, `u = |y|`, `v = ⟨x, y⟩`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::family::ProjectiveFamily;
use crate::jets::Jet;

pub const R: usize = 0;
pub const U: usize = 1;
pub const V: usize = 2;

/// Slack on `φ_vv ≥ 0` in the convexity lemma, absorbing rounding when `φ_vv = 0`.
pub const LEMMA_SLACK: f64 = 1e-12;

/// `|Σ terms| / Σ |terms|`, or 0 when every term vanishes.
pub fn relative_residual(terms: &[f64]) -> f64 {
    relative_residual_floor(terms, 0.0)
}

/// Like [`relative_residual`] with an additive floor on the denominator.
pub fn relative_residual_floor(terms: &[f64], floor: f64) -> f64 {
    let sum: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|t| t.abs()).sum::<f64>() + floor.abs();
    if scale == 0.0 {
        0.0
    } else {
        sum.abs() / scale
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The rotation invariants `(r, u, v) = (|x|, |y|, ⟨x, y⟩)`, with `|v| ≤ ru` enforced.
pub fn invariants_of(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    let r = norm(x);
    let u = norm(y);
    if u == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let bound = r * u;
    let v = dot(x, y).clamp(-bound, bound);
    Ok((r, u, v))
}

/// A point of the slit tangent bundle together with its cached invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: f64,
    pub u: f64,
    pub v: f64,
}

impl MetricSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let (r, u, v) = invariants_of(&x, &y)?;
        Ok(MetricSample { x, y, r, u, v })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// The classical spherically symmetric metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Builtin {
    Euclidean,
    Klein,
    Funk,
    Berwald,
    Spherical,
    Bryant { alpha: f64 },
}

pub const BUILTIN_NAMES: [&str; 6] = ["euclidean", "klein", "funk", "berwald", "spherical", "bryant"];

impl Builtin {
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = if name == "bryant" { &["alpha"] } else { &[] };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidParameter(format!("`{name}` takes no parameter `{k}`")));
        }
        Ok(match name {
            "euclidean" => Builtin::Euclidean,
            "klein" => Builtin::Klein,
            "funk" => Builtin::Funk,
            "berwald" => Builtin::Berwald,
            "spherical" => Builtin::Spherical,
            "bryant" => {
                let alpha =
                    *params.get("alpha").ok_or_else(|| Error::InvalidParameter("bryant requires `alpha`".into()))?;
                if !(0.0..FRAC_PI_2).contains(&alpha) {
                    return Err(Error::InvalidParameter(format!("bryant alpha = {alpha} is outside [0, pi/2)")));
                }
                Builtin::Bryant { alpha }
            }
            other => return Err(Error::UnknownMetric(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Euclidean => "euclidean",
            Builtin::Klein => "klein",
            Builtin::Funk => "funk",
            Builtin::Berwald => "berwald",
            Builtin::Spherical => "spherical",
            Builtin::Bryant { .. } => "bryant",
        }
    }

    pub fn domain_radius(&self) -> f64 {
        match self {
            Builtin::Klein | Builtin::Funk | Builtin::Berwald => 1.0,
            _ => f64::INFINITY,
        }
    }

    /// Curvature constant the metric is known to have. Metadata only.
    pub fn expected_k(&self) -> f64 {
        match self {
            Builtin::Euclidean | Builtin::Berwald => 0.0,
            Builtin::Klein => -1.0,
            Builtin::Funk => -0.25,
            Builtin::Spherical | Builtin::Bryant { .. } => 1.0,
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        match self {
            Builtin::Bryant { alpha } => BTreeMap::from([("alpha".to_string(), *alpha)]),
            _ => BTreeMap::new(),
        }
    }

    /// `φ(r, u, v)` on arbitrary jets.
    pub fn phi(&self, r: &Jet, u: &Jet, v: &Jet) -> Result<Jet> {
        let r2 = r.square();
        let u2 = u.square();
        // |x|²|y|² − ⟨x,y⟩²
        let gram = &(&r2 * &u2) - &v.square();
        let ball = |j: &Jet| j.scale(-1.0).add_scalar(1.0); // 1 − r²
        Ok(match self {
            Builtin::Euclidean => u.clone(),
            Builtin::Klein => (&u2 - &gram).sqrt()?.div(&ball(&r2))?,
            Builtin::Funk => (&(&u2 - &gram).sqrt()? + v).div(&ball(&r2))?,
            Builtin::Berwald => {
                let a = (&u2 - &gram).sqrt()?;
                let num = (&a + v).square();
                let den = &ball(&r2).square() * &a;
                num.div(&den)?
            }
            Builtin::Spherical => (&u2 + &gram).sqrt()?.div(&r2.add_scalar(1.0))?,
            Builtin::Bryant { alpha } => {
                let (s, c) = (2.0 * alpha).sin_cos();
                let b = &u2.scale(c) + &gram;
                let su2 = u2.scale(s);
                let a = &b.square() + &su2.square();
                let root_a = a.sqrt()?;
                // √A + B without cancellation when B < 0
                let sum = if b.value() >= 0.0 { &root_a + &b } else { su2.square().div(&(&root_a - &b))? };
                let d = &(&r2.square() + &r2.scale(2.0 * c)) + 1.0;
                let cd = v.scale(s).div(&d)?;
                let inner = &sum.div(&d.scale(2.0))? + &cd.square();
                &inner.sqrt()? + &cd
            }
        })
    }
}

/// Where `φ` comes from.
#[derive(Debug, Clone)]
pub enum PhiSource {
    Builtin(Builtin),
    /// A formula in `r`, `u`, `v`.
    Expr(Expr),
    /// The projective integral family, evaluated by quadrature.
    Family(Box<ProjectiveFamily>),
}

impl PhiSource {
    /// Closed forms can be evaluated on arbitrary jets; the family cannot.
    pub fn eval_closed_form(&self, r: &Jet, u: &Jet, v: &Jet) -> Option<Result<Jet>> {
        match self {
            PhiSource::Builtin(b) => Some(b.phi(r, u, v)),
            PhiSource::Expr(e) => Some(e.eval(&[("r", r), ("u", u), ("v", v)]).map_err(Error::from)),
            PhiSource::Family(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SphericalMetric {
    pub name: String,
    pub source: PhiSource,
    pub domain_radius: f64,
    pub params: BTreeMap<String, f64>,
    pub expected_k: Option<f64>,
}

impl SphericalMetric {
    pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let b = Builtin::from_name(name, params)?;
        Ok(SphericalMetric::from_builtin(b))
    }

    pub fn from_builtin(b: Builtin) -> Self {
        SphericalMetric {
            name: b.name().to_string(),
            source: PhiSource::Builtin(b),
            domain_radius: b.domain_radius(),
            params: b.params(),
            expected_k: Some(b.expected_k()),
        }
    }

    /// `φ` given as a formula in `r`, `u`, `v`.
    pub fn from_phi_expr(name: &str, source: &str, domain_radius: f64) -> Result<Self> {
        let e = Expr::parse(source, &["r", "u", "v"])?;
        Ok(SphericalMetric {
            name: name.to_string(),
            source: PhiSource::Expr(e),
            domain_radius,
            params: BTreeMap::new(),
            expected_k: None,
        })
    }

    /// All partials of `φ` at `(r, u, v)` up to `order`, as a jet in `(r, u, v)`.
    pub fn phi_jet(&self, r: f64, u: f64, v: f64, order: usize) -> Result<Jet> {
        if !(u > 0.0) {
            return Err(Error::ZeroDirection);
        }
        if !(r < self.domain_radius) {
            return Err(Error::OutsideDomain { r, radius: self.domain_radius });
        }
        match &self.source {
            PhiSource::Family(fam) => fam.phi_jet(r, u, v, order),
            closed => {
                let rj = Jet::lift_var(R, r, 3, order)?;
                let uj = Jet::lift_var(U, u, 3, order)?;
                let vj = Jet::lift_var(V, v, 3, order)?;
                closed.eval_closed_form(&rj, &uj, &vj).expect("closed form")
            }
        }
    }

    pub fn phi(&self, r: f64, u: f64, v: f64) -> Result<f64> {
        Ok(self.phi_jet(r, u, v, 0)?.value())
    }

    /// Chain rule from a `(r, u, v)` jet to a jet in the variables of `r`, `u`, `v`.
    fn compose(&self, rj: &Jet, uj: &Jet, vj: &Jet) -> Result<Jet> {
        let outer = self.phi_jet(rj.value(), uj.value(), vj.value(), rj.order())?;
        Ok(Jet::compose_multi(&outer, &[rj.clone(), uj.clone(), vj.clone()])?)
    }
}

/// A metric given directly as `F(x, y)` in a fixed dimension.
#[derive(Debug, Clone)]
pub struct GeneralMetric {
    pub name: String,
    pub n: usize,
    pub domain_radius: f64,
    pub form: GeneralForm,
}

#[derive(Debug, Clone)]
pub enum GeneralForm {
    /// A formula in `x1..xn`, `y1..yn`.
    Expr(Expr),
    /// A closed-form `φ` evaluated on jets of `|x|`, `|y|`, `⟨x, y⟩` directly,
    /// bypassing the `(r, u, v)` chain rule.
    Radial(PhiSource),
}

impl GeneralMetric {
    pub fn variable_names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("x{i}")).chain((1..=n).map(|i| format!("y{i}"))).collect()
    }

    pub fn from_expr(name: &str, source: &str, n: usize, domain_radius: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let names = GeneralMetric::variable_names(n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let e = Expr::parse(source, &refs)?;
        Ok(GeneralMetric { name: name.to_string(), n, domain_radius, form: GeneralForm::Expr(e) })
    }

    /// Direct `(x, y)` evaluation of a closed-form spherical metric.
    pub fn radial(metric: &SphericalMetric, n: usize) -> Result<Self> {
        if matches!(metric.source, PhiSource::Family(_)) {
            return Err(Error::InvalidParameter("family metrics have no closed form".into()));
        }
        Ok(GeneralMetric {
            name: format!("{} (direct)", metric.name),
            n,
            domain_radius: metric.domain_radius,
            form: GeneralForm::Radial(metric.source.clone()),
        })
    }

    fn eval(&self, xs: &[Jet], ys: &[Jet]) -> Result<Jet> {
        match &self.form {
            GeneralForm::Expr(e) => {
                let names = GeneralMetric::variable_names(self.n);
                let bindings: Vec<(&str, &Jet)> =
                    names.iter().map(String::as_str).zip(xs.iter().chain(ys.iter())).collect();
                Ok(e.eval(&bindings)?)
            }
            GeneralForm::Radial(src) => {
                let sum_sq = |v: &[Jet]| v.iter().skip(1).fold(v[0].square(), |acc, j| &acc + &j.square());
                let r2 = sum_sq(xs);
                let r = if r2.value() == 0.0 && r2.order() > 0 {
                    if xs.iter().any(|j| j.gradient().iter().any(|&g| g != 0.0)) {
                        return Err(Error::AtOrigin);
                    }
                    Jet::constant(0.0, r2.nvars(), r2.order())
                } else if r2.value() == 0.0 {
                    r2.clone()
                } else {
                    r2.sqrt()?
                };
                let u = sum_sq(ys).sqrt()?;
                let v = xs.iter().zip(ys).skip(1).fold(&xs[0] * &ys[0], |acc, (a, b)| &acc + &(a * b));
                src.eval_closed_form(&r, &u, &v).expect("radial forms are closed")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Metric {
    Spherical(SphericalMetric),
    General(GeneralMetric),
}

impl From<SphericalMetric> for Metric {
    fn from(m: SphericalMetric) -> Self {
        Metric::Spherical(m)
    }
}

impl From<GeneralMetric> for Metric {
    fn from(m: GeneralMetric) -> Self {
        Metric::General(m)
    }
}

impl Metric {
    pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        Ok(Metric::Spherical(SphericalMetric::builtin(name, params)?))
    }

    pub fn name(&self) -> &str {
        match self {
            Metric::Spherical(m) => &m.name,
            Metric::General(m) => &m.name,
        }
    }

    pub fn domain_radius(&self) -> f64 {
        match self {
            Metric::Spherical(m) => m.domain_radius,
            Metric::General(m) => m.domain_radius,
        }
    }

    pub fn expected_k(&self) -> Option<f64> {
        match self {
            Metric::Spherical(m) => m.expected_k,
            Metric::General(_) => None,
        }
    }

    /// Fixed dimension of a general metric; spherical metrics work in any dimension.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            Metric::Spherical(_) => None,
            Metric::General(m) => Some(m.n),
        }
    }

    pub fn as_spherical(&self) -> Option<&SphericalMetric> {
        match self {
            Metric::Spherical(m) => Some(m),
            Metric::General(_) => None,
        }
    }

    fn check_point(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if let Some(n) = self.dimension() {
            if x.len() != n {
                return Err(Error::Dimension { expected: n, got: x.len() });
            }
        }
        if x.len() != y.len() {
            return Err(Error::Dimension { expected: x.len(), got: y.len() });
        }
        if y.iter().all(|&c| c == 0.0) {
            return Err(Error::ZeroDirection);
        }
        let r = norm(x);
        if !(r < self.domain_radius()) {
            return Err(Error::OutsideDomain { r, radius: self.domain_radius() });
        }
        Ok(())
    }

    /// `F(x, y)`, which must come out positive.
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let value = self.y_jet(x, y, 0)?.value();
        if !(value > 0.0) {
            let (r, u, v) = invariants_of(x, y)?;
            return Err(Error::NonPositive { metric: self.name().to_string(), r, u, v, value });
        }
        Ok(value)
    }

    /// Jet of `F` in the `n` components of `y`, with `x` held fixed.
    pub fn y_jet(&self, x: &[f64], y: &[f64], order: usize) -> Result<Jet> {
        self.check_point(x, y)?;
        let n = x.len();
        let ys = Jet::lift_all(y, order)?;
        match self {
            Metric::Spherical(m) => {
                let r = Jet::constant(norm(x), n, order);
                let u = ys.iter().skip(1).fold(ys[0].square(), |acc, j| &acc + &j.square()).sqrt()?;
                let v = ys.iter().zip(x).skip(1).fold(ys[0].scale(x[0]), |acc, (j, &c)| &acc + &j.scale(c));
                m.compose(&r, &u, &v)
            }
            Metric::General(m) => {
                let xs: Vec<Jet> = x.iter().map(|&c| Jet::constant(c, n, order)).collect();
                m.eval(&xs, &ys)
            }
        }
    }

    /// Jet of `F` in all `2n` coordinates, ordered `x¹..xⁿ, y¹..yⁿ`.
    pub fn xy_jet(&self, x: &[f64], y: &[f64], order: usize) -> Result<Jet> {
        self.check_point(x, y)?;
        let n = x.len();
        let point: Vec<f64> = x.iter().chain(y).copied().collect();
        let vars = Jet::lift_all(&point, order)?;
        let (xs, ys) = vars.split_at(n);
        match self {
            Metric::Spherical(m) => {
                let r2 = xs.iter().skip(1).fold(xs[0].square(), |acc, j| &acc + &j.square());
                if r2.value() == 0.0 && order > 0 {
                    return Err(Error::AtOrigin);
                }
                let r = if order == 0 { Jet::constant(r2.value().sqrt(), 2 * n, 0) } else { r2.sqrt()? };
                let u = ys.iter().skip(1).fold(ys[0].square(), |acc, j| &acc + &j.square()).sqrt()?;
                let v = xs.iter().zip(ys).skip(1).fold(&xs[0] * &ys[0], |acc, (a, b)| &acc + &(a * b));
                m.compose(&r, &u, &v)
            }
            Metric::General(m) => m.eval(xs, ys),
        }
    }
}

/// `½ ∂²F²/∂yⁱ∂yʲ` by differentiating `F` directly.
pub fn fundamental_tensor_ad(metric: &Metric, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
    let f = metric.y_jet(x, y, 2)?;
    let e = f.square().scale(0.5);
    let n = x.len();
    Ok(DMatrix::from_fn(n, n, |i, j| e.hess(i, j)))
}

/// The fundamental tensor. Spherical metrics use the closed form
/// `g_ij = (φφ_u/u)δ_ij + (φ_v² + φφ_vv)xⁱxʲ + ((φ_u² + φφ_uu)/u² − φφ_u/u³)yⁱyʲ
///        + ((φ_uφ_v + φφ_uv)/u)(xⁱyʲ + xʲyⁱ)`;
/// general metrics fall back to [`fundamental_tensor_ad`].
pub fn fundamental_tensor(metric: &Metric, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
    let Metric::Spherical(m) = metric else {
        return fundamental_tensor_ad(metric, x, y);
    };
    metric.check_point(x, y)?;
    let (r, u, v) = invariants_of(x, y)?;
    let j = m.phi_jet(r, u, v, 2)?;
    let (p, pu, pv) = (j.value(), j.grad(U), j.grad(V));
    let (puu, puv, pvv) = (j.hess(U, U), j.hess(U, V), j.hess(V, V));
    let c_delta = p * pu / u;
    let c_xx = pv * pv + p * pvv;
    let c_yy = (pu * pu + p * puu) / (u * u) - p * pu / (u * u * u);
    let c_xy = (pu * pv + p * puv) / u;
    let n = x.len();
    Ok(DMatrix::from_fn(n, n, |a, b| {
        let delta = if a == b { c_delta } else { 0.0 };
        delta + c_xx * x[a] * x[b] + c_yy * y[a] * y[b] + c_xy * (x[a] * y[b] + x[b] * y[a])
    }))
}

/// `det(g) = (φ/u)^(n+1) φ_u^(n−2) [φ_u + (|x|²|y|² − ⟨x,y⟩²) φ_vv / u]`.
pub fn det_g_closed_form(metric: &SphericalMetric, x: &[f64], y: &[f64]) -> Result<f64> {
    let (r, u, v) = invariants_of(x, y)?;
    let n = x.len() as i32;
    let j = metric.phi_jet(r, u, v, 2)?;
    let (p, pu, pvv) = (j.value(), j.grad(U), j.hess(V, V));
    let gram = (r * r * u * u - v * v).max(0.0);
    Ok((p / u).powi(n + 1) * pu.powi(n - 2) * (pu + gram * pvv / u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvexityReport {
    /// `φ_u > 0` and `φ_vv ≥ −1e−12`: the sufficient condition.
    pub lemma_ok: bool,
    /// `g` admits a Cholesky factorization.
    pub direct_pd: bool,
}

pub fn is_positive_definite(g: &DMatrix<f64>) -> bool {
    g.iter().all(|x| x.is_finite()) && g.clone().cholesky().is_some()
}

pub fn convexity_report(metric: &SphericalMetric, x: &[f64], y: &[f64]) -> Result<ConvexityReport> {
    let (r, u, v) = invariants_of(x, y)?;
    let j = metric.phi_jet(r, u, v, 2)?;
    let lemma_ok = j.grad(U) > 0.0 && j.hess(V, V) >= -LEMMA_SLACK;
    let g = fundamental_tensor(&Metric::Spherical(metric.clone()), x, y)?;
    Ok(ConvexityReport { lemma_ok, direct_pd: is_positive_definite(&g) })
}

/// Worst violation of the Euler relations of a 1-homogeneous `φ`:
/// `uφ_u + vφ_v = φ` (relative to `φ`), `uφ_uu + vφ_uv = 0`, `uφ_uv + vφ_vv = 0`
/// and `φ_uu = (v/u)²φ_vv`.
pub fn homogeneity_residual(metric: &SphericalMetric, r: f64, u: f64, v: f64) -> Result<f64> {
    let j = metric.phi_jet(r, u, v, 2)?;
    let (p, pu, pv) = (j.value(), j.grad(U), j.grad(V));
    let (puu, puv, pvv) = (j.hess(U, U), j.hess(U, V), j.hess(V, V));
    let first = (u * pu + v * pv - p).abs() / p.abs();
    // second-order terms scale like φ/u (or φ/u² for the last identity)
    let s1 = p.abs() / u;
    let second_a = relative_residual_floor(&[u * puu, v * puv], s1);
    let second_b = relative_residual_floor(&[u * puv, v * pvv], s1);
    let q = v / u;
    let second_c = relative_residual_floor(&[puu, -q * q * pvv], s1 / u);
    Ok(first.max(second_a).max(second_b).max(second_c))
}

/// `|φ(r, u, −v) − φ(r, u, v)| / φ(r, u, v)`.
pub fn reversibility_residual(metric: &SphericalMetric, r: f64, u: f64, v: f64) -> Result<f64> {
    let fwd = metric.phi(r, u, v)?;
    let back = metric.phi(r, u, -v)?;
    Ok((back - fwd).abs() / fwd.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannianProbe {
    /// Largest change of any `g_ij(x, ·)` entry across the probed directions.
    pub g_spread: f64,
    /// Largest Cartan tensor entry seen.
    pub max_cartan: f64,
}

/// A Riemannian metric has `g` independent of `y` and vanishing Cartan tensor.
pub fn riemannian_probe(metric: &Metric, x: &[f64], ys: &[Vec<f64>]) -> Result<RiemannianProbe> {
    let gs = ys.iter().map(|y| fundamental_tensor(metric, x, y)).collect::<Result<Vec<_>>>()?;
    let mut g_spread: f64 = 0.0;
    for (a, ga) in gs.iter().enumerate() {
        for gb in &gs[a + 1..] {
            g_spread = g_spread.max((ga - gb).amax());
        }
    }
    let mut max_cartan: f64 = 0.0;
    for y in ys {
        let c = crate::symmetry::cartan_tensor(metric, x, y)?;
        max_cartan = max_cartan.max(c.max_abs());
    }
    Ok(RiemannianProbe { g_spread, max_cartan })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtin(name: &str) -> SphericalMetric {
        SphericalMetric::builtin(name, &BTreeMap::new()).unwrap()
    }

    fn bryant(alpha: f64) -> SphericalMetric {
        SphericalMetric::builtin("bryant", &BTreeMap::from([("alpha".to_string(), alpha)])).unwrap()
    }

    #[test]
    fn invariants() {
        assert_eq!(invariants_of(&[0.5, 0.0], &[0.0, 1.0]).unwrap(), (0.5, 1.0, 0.0));
        assert_eq!(invariants_of(&[0.5, 0.0], &[1.0, 0.0]).unwrap(), (0.5, 1.0, 0.5));
        assert_eq!(invariants_of(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), (0.0, 5.0, 0.0));
        assert_eq!(invariants_of(&[1.0, 0.0], &[0.0, 0.0]), Err(Error::ZeroDirection));
    }

    #[test]
    fn evaluate_spot_values() {
        let funk = Metric::from(builtin("funk"));
        assert!((funk.evaluate(&[0.5, 0.0], &[1.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        let klein = Metric::from(builtin("klein"));
        let k = klein.evaluate(&[0.5, 0.0], &[0.0, 1.0]).unwrap();
        assert!((k - 0.75f64.sqrt() / 0.75).abs() < 1e-15);
        let e = Metric::from(builtin("euclidean"));
        assert_eq!(e.evaluate(&[7.0, -2.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(funk.evaluate(&[1.2, 0.0], &[1.0, 0.0]), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn phi_jet_spot_values() {
        let funk = builtin("funk").phi_jet(0.5, 1.0, 0.5, 2).unwrap();
        assert!((funk.grad(U) - 1.0).abs() < 1e-15);
        let e = builtin("euclidean").phi_jet(0.3, 1.7, -0.2, 2).unwrap();
        assert_eq!(e.grad(U), 1.0);
        assert!(e.hess_packed().iter().all(|&h| h == 0.0));
        let klein = builtin("klein").phi_jet(0.5, 1.0, 0.0, 1).unwrap();
        assert_eq!(klein.grad(V), 0.0);
    }

    #[test]
    fn fundamental_tensor_identities() {
        let e = Metric::from(builtin("euclidean"));
        let g = fundamental_tensor(&e, &[0.3, 0.1, -0.2], &[1.0, 2.0, 0.5]).unwrap();
        assert!((g - DMatrix::identity(3, 3)).amax() < 1e-15);

        let funk = Metric::from(builtin("funk"));
        let g = fundamental_tensor(&funk, &[0.0, 0.0], &[0.6, -1.1]).unwrap();
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-14);

        let klein = Metric::from(builtin("klein"));
        let (x, y) = ([0.5, 0.0], [0.0, 1.0]);
        let closed = fundamental_tensor(&klein, &x, &y).unwrap();
        let ad = fundamental_tensor_ad(&klein, &x, &y).unwrap();
        assert!((closed - ad).amax() < 1e-10);
    }

    #[test]
    fn determinant_closed_form() {
        let e = builtin("euclidean");
        assert!((det_g_closed_form(&e, &[0.2, 0.4], &[1.0, -0.3]).unwrap() - 1.0).abs() < 1e-15);

        let funk = builtin("funk");
        let (x, y) = ([0.5, 0.0], [1.0, 0.0]);
        let direct = fundamental_tensor(&Metric::from(funk.clone()), &x, &y).unwrap().determinant();
        let closed = det_g_closed_form(&funk, &x, &y).unwrap();
        assert!((closed - direct).abs() <= 1e-8 * direct.abs());

        let b = bryant(std::f64::consts::FRAC_PI_6);
        let (x, y) = ([0.7, -0.4, 1.1], [0.3, 1.2, -0.8]);
        let direct = fundamental_tensor(&Metric::from(b.clone()), &x, &y).unwrap().determinant();
        let closed = det_g_closed_form(&b, &x, &y).unwrap();
        assert!((closed - direct).abs() <= 1e-8 * direct.abs(), "{closed} vs {direct}");
    }

    #[test]
    fn convexity() {
        let e = convexity_report(&builtin("euclidean"), &[0.1, 0.2], &[1.0, 0.0]).unwrap();
        assert_eq!(e, ConvexityReport { lemma_ok: true, direct_pd: true });
        let f = convexity_report(&builtin("funk"), &[0.4, -0.6], &[0.2, 1.0]).unwrap();
        assert_eq!(f, ConvexityReport { lemma_ok: true, direct_pd: true });
        let bad = SphericalMetric::from_phi_expr("pseudo", "u - 2*v*(v/u)", f64::INFINITY).unwrap();
        // φ_u + (r²u² − v²)φ_vv/u = 1 − 4r² at v = 0
        let rep = convexity_report(&bad, &[0.9, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(rep, ConvexityReport { lemma_ok: false, direct_pd: false });
    }

    #[test]
    fn homogeneity() {
        for name in ["klein", "funk", "berwald", "spherical"] {
            let h = homogeneity_residual(&builtin(name), 0.4, 1.3, 0.2).unwrap();
            assert!(h <= 1e-10, "{name}: {h}");
        }
        assert_eq!(homogeneity_residual(&builtin("euclidean"), 0.4, 1.3, 0.2).unwrap(), 0.0);
        let bad = SphericalMetric::from_phi_expr("u2", "u^2", f64::INFINITY).unwrap();
        let h = homogeneity_residual(&bad, 0.5, 2.0, 0.0).unwrap();
        assert!(h >= 1.0, "{h}");
    }

    #[test]
    fn reversibility() {
        assert!(reversibility_residual(&builtin("klein"), 0.5, 1.0, 0.3).unwrap() <= 1e-12);
        let f = reversibility_residual(&builtin("funk"), 0.5, 1.0, 0.5).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-14, "{f}");
        assert_eq!(reversibility_residual(&builtin("euclidean"), 0.5, 1.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn riemannian_detection() {
        let ys = vec![vec![1.0, 0.0], vec![0.3, -0.9], vec![-0.5, 0.5]];
        let x = [0.3, 0.4];
        let k = riemannian_probe(&Metric::from(builtin("klein")), &x, &ys).unwrap();
        assert!(k.g_spread <= 1e-9 && k.max_cartan <= 1e-9, "{k:?}");
        let f = riemannian_probe(&Metric::from(builtin("funk")), &x, &ys).unwrap();
        assert!(f.g_spread > 0.01, "{f:?}");
        let e = riemannian_probe(&Metric::from(builtin("euclidean")), &x, &ys).unwrap();
        assert!(e.g_spread <= 1e-15);
    }

    #[test]
    fn builtin_registry() {
        let f = builtin("funk");
        assert_eq!((f.domain_radius, f.expected_k), (1.0, Some(-0.25)));
        assert!(matches!(
            SphericalMetric::builtin("bryant", &BTreeMap::from([("alpha".to_string(), 2.0)])),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(SphericalMetric::builtin("fnuk", &BTreeMap::new()), Err(Error::UnknownMetric(_))));
        assert!(SphericalMetric::builtin("bryant", &BTreeMap::new()).is_err());
    }

    #[test]
    fn bryant_at_zero_is_spherical() {
        let b = bryant(0.0);
        let s = builtin("spherical");
        for &(r, u, v) in &[(0.1, 1.0, 0.05), (1.5, 0.3, -0.4), (0.7, 2.0, 1.3)] {
            let (pb, ps) = (b.phi(r, u, v).unwrap(), s.phi(r, u, v).unwrap());
            assert!((pb - ps).abs() <= 1e-12 * ps, "{pb} vs {ps}");
        }
    }

    #[test]
    fn xy_chain_rule_matches_direct_evaluation() {
        let b = bryant(1.2);
        let via_phi = Metric::from(b.clone());
        let direct = Metric::from(GeneralMetric::radial(&b, 3).unwrap());
        let (x, y) = ([0.4, -0.9, 0.3], [1.1, 0.2, -0.7]);
        let a = via_phi.xy_jet(&x, &y, 3).unwrap().components();
        let d = direct.xy_jet(&x, &y, 3).unwrap().components();
        let scale = d.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        for (p, q) in a.iter().zip(&d) {
            assert!((p - q).abs() <= 1e-11 * scale, "{p} vs {q}");
        }
    }
}
