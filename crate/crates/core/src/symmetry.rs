//! Killing-field machinery for rotations of R^n.
//!
//! A rotation generator `X = xʲ∂ᵢ − xⁱ∂ⱼ` is a Killing field of `F` when
//!
//! ```text
//! ∂g_ij/∂xᵖ Xᵖ + g_pj ∂Xᵖ/∂xⁱ + g_ip ∂Xᵖ/∂xʲ + 2 C_ijp (∂Xᵖ/∂xᵏ) yᵏ = 0
//! ```
//!
//! and, contracting twice with `y`, `F_{xⁱ} Xⁱ + F_{yⁱ} (∂Xⁱ/∂xʲ) yʲ = 0`.
//! Both are necessary conditions only, so a passing verdict means "consistent with
//! spherical symmetry" at the sampled points.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jets::Jet;
use crate::metric::{relative_residual, Metric, MetricSample};

/// Default tolerance on the scalar Killing residual.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// The infinitesimal rotation in the `(xⁱ, xʲ)` plane (0-based axes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotationField {
    pub i: usize,
    pub j: usize,
    pub n: usize,
}

impl RotationField {
    pub fn new(i: usize, j: usize, n: usize) -> Result<Self> {
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidField { i, j, n });
        }
        Ok(RotationField { i, j, n })
    }

    /// All `n(n−1)/2` generators, `i < j`.
    pub fn all(n: usize) -> Vec<RotationField> {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| RotationField { i, j, n })).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        out[self.i] = x[self.j];
        out[self.j] = -x[self.i];
        out
    }

    /// `∂Xᵖ/∂xᵏ`; constant and antisymmetric.
    pub fn jacobian(&self, p: usize, k: usize) -> f64 {
        if p == self.i && k == self.j {
            1.0
        } else if p == self.j && k == self.i {
            -1.0
        } else {
            0.0
        }
    }

    /// 1-based axis label, e.g. `(1,2)`.
    pub fn label(&self) -> String {
        format!("({},{})", self.i + 1, self.j + 1)
    }
}

/// Dense fully symmetric rank-3 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// `C_ijp wᵖ`.
    pub fn contract(&self, w: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| (0..self.n).map(|p| self.get(i, j, p) * w[p]).sum())
    }
}

fn energy(f: &Jet) -> Jet {
    f.square().scale(0.5)
}

/// `C_ijk = ½ ∂g_ij/∂yᵏ = ¼ ∂³F²/∂yⁱ∂yʲ∂yᵏ`.
pub fn cartan_tensor(metric: &Metric, x: &[f64], y: &[f64]) -> Result<Tensor3> {
    let e = energy(&metric.y_jet(x, y, 3)?);
    let n = x.len();
    let mut data = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                data.push(0.5 * e.third(i, j, k));
            }
        }
    }
    Ok(Tensor3 { n, data })
}

/// `max |C_ijp yᵖ| / max |g_ij|`; vanishes by 0-homogeneity of `g`.
pub fn cartan_contraction_residual(metric: &Metric, x: &[f64], y: &[f64]) -> Result<f64> {
    let e = energy(&metric.y_jet(x, y, 3)?);
    let n = x.len();
    let mut worst: f64 = 0.0;
    let mut gmax: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            gmax = gmax.max(e.hess(i, j).abs());
            let c: f64 = (0..n).map(|p| 0.5 * e.third(i, j, p) * y[p]).sum();
            worst = worst.max(c.abs());
        }
    }
    Ok(if gmax == 0.0 { worst } else { worst / gmax })
}

/// Relative residual of `F_{xⁱ} Xⁱ + F_{yⁱ} (∂Xⁱ/∂xʲ) yʲ`.
pub fn killing_scalar_residual(metric: &Metric, field: &RotationField, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != field.n {
        return Err(Error::Dimension { expected: field.n, got: x.len() });
    }
    let f = metric.xy_jet(x, y, 1)?;
    let n = field.n;
    let xf = field.apply(x);
    let mut terms: Vec<f64> = (0..n).map(|p| f.grad(p) * xf[p]).collect();
    for i in 0..n {
        for (k, yk) in y.iter().enumerate() {
            let d = field.jacobian(i, k);
            if d != 0.0 {
                terms.push(f.grad(n + i) * d * yk);
            }
        }
    }
    Ok(relative_residual(&terms))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorResidual {
    /// Left-hand side of the tensor Killing equation.
    pub matrix: DMatrix<f64>,
    /// `max |T_ij|` over the largest per-entry sum of term magnitudes.
    pub relative: f64,
}

pub fn killing_tensor_residual(metric: &Metric, field: &RotationField, x: &[f64], y: &[f64]) -> Result<TensorResidual> {
    if x.len() != field.n {
        return Err(Error::Dimension { expected: field.n, got: x.len() });
    }
    let n = field.n;
    let e = energy(&metric.xy_jet(x, y, 3)?);
    let xf = field.apply(x);
    let g = |a: usize, b: usize| e.hess(n + a, n + b);
    // (∂Xᵖ/∂xᵏ) yᵏ
    let flow_y: Vec<f64> = (0..n).map(|p| (0..n).map(|k| field.jacobian(p, k) * y[k]).sum()).collect();
    let mut matrix = DMatrix::zeros(n, n);
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut terms = Vec::with_capacity(4 * n);
            for p in 0..n {
                terms.push(e.third(p, n + i, n + j) * xf[p]);
                terms.push(g(p, j) * field.jacobian(p, i));
                terms.push(g(i, p) * field.jacobian(p, j));
                terms.push(e.third(n + i, n + j, n + p) * flow_y[p]);
            }
            matrix[(i, j)] = terms.iter().sum();
            scale = scale.max(terms.iter().map(|t| t.abs()).sum());
        }
    }
    let relative = if scale == 0.0 { 0.0 } else { matrix.amax() / scale };
    Ok(TensorResidual { matrix, relative })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryVerdict {
    pub max_residual: f64,
    pub worst_field: Option<RotationField>,
    pub worst_sample: Option<usize>,
    pub fields_tested: usize,
    pub samples: usize,
    pub tolerance: f64,
    /// Every Killing residual within tolerance. Consistent with, not a proof of, symmetry.
    pub consistent: bool,
}

/// Scalar Killing residual over every rotation generator and sample.
pub fn symmetry_verdict(metric: &Metric, samples: &[MetricSample], tolerance: f64) -> Result<SymmetryVerdict> {
    let n = samples.first().map_or(metric.dimension().unwrap_or(2), MetricSample::dim);
    let fields = RotationField::all(n);
    let per_sample: Vec<(f64, usize)> = samples
        .par_iter()
        .map(|s| {
            let mut best = (0.0, 0);
            for (fi, field) in fields.iter().enumerate() {
                let res = killing_scalar_residual(metric, field, &s.x, &s.y)?;
                if res > best.0 {
                    best = (res, fi);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mut verdict = SymmetryVerdict {
        max_residual: 0.0,
        worst_field: None,
        worst_sample: None,
        fields_tested: fields.len(),
        samples: samples.len(),
        tolerance,
        consistent: true,
    };
    for (idx, &(res, fi)) in per_sample.iter().enumerate() {
        if verdict.worst_sample.is_none() || res > verdict.max_residual {
            verdict.max_residual = res;
            verdict.worst_field = fields.get(fi).copied();
            verdict.worst_sample = Some(idx);
        }
    }
    verdict.consistent = verdict.max_residual <= tolerance;
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::metric::{GeneralMetric, SphericalMetric};

    fn builtin(name: &str) -> Metric {
        Metric::builtin(name, &BTreeMap::new()).unwrap()
    }

    fn anisotropic(n: usize) -> Metric {
        let body: Vec<String> = (1..=n).map(|i| format!("y{i}^2")).collect();
        let src = format!("sqrt({} + y1^2)", body.join(" + "));
        Metric::from(GeneralMetric::from_expr("anisotropic", &src, n, f64::INFINITY).unwrap())
    }

    #[test]
    fn rotation_fields() {
        assert_eq!(RotationField::all(2).len(), 1);
        assert_eq!(RotationField::all(4).len(), 6);
        let f = RotationField::new(0, 2, 3).unwrap();
        assert_eq!(f.apply(&[1.0, 2.0, 3.0]), vec![3.0, 0.0, -1.0]);
        for p in 0..3 {
            for k in 0..3 {
                assert_eq!(f.jacobian(p, k), -f.jacobian(k, p));
            }
        }
        assert!(RotationField::new(1, 1, 3).is_err());
        assert!(RotationField::new(0, 3, 3).is_err());
    }

    #[test]
    fn scalar_residuals() {
        let f = RotationField::new(0, 1, 2).unwrap();
        let funk = builtin("funk");
        assert!(killing_scalar_residual(&funk, &f, &[0.3, -0.5], &[1.2, 0.7]).unwrap() <= 1e-10);
        let e = builtin("euclidean");
        assert!(killing_scalar_residual(&e, &f, &[0.3, -0.5], &[1.2, 0.7]).unwrap() <= 1e-15);

        // F = sqrt(|y|^2 + (y1)^2): raw residual y1 y2 / F = 1/sqrt(3), terms 2/sqrt(3) and 1/sqrt(3)
        let res = killing_scalar_residual(&anisotropic(2), &f, &[0.2, 0.1], &[1.0, 1.0]).unwrap();
        assert!((res - 1.0 / 3.0).abs() < 1e-14, "{res}");
    }

    #[test]
    fn tensor_residuals() {
        let f = RotationField::new(0, 1, 2).unwrap();
        let e = killing_tensor_residual(&builtin("euclidean"), &f, &[0.3, 0.2], &[1.0, 0.5]).unwrap();
        assert!(e.matrix.amax() <= 1e-15);
        let funk = killing_tensor_residual(&builtin("funk"), &f, &[0.3, 0.2], &[1.0, 0.5]).unwrap();
        assert!(funk.relative <= 1e-8, "{}", funk.relative);
        let bad = killing_tensor_residual(&anisotropic(2), &f, &[0.3, 0.2], &[1.0, 0.5]).unwrap();
        assert!(bad.relative > 0.05, "{}", bad.relative);
    }

    #[test]
    fn cartan() {
        let (x, y) = ([0.2, -0.3], [0.8, 0.4]);
        for name in ["klein", "spherical", "euclidean"] {
            assert!(cartan_tensor(&builtin(name), &x, &y).unwrap().max_abs() <= 1e-12, "{name}");
        }
        let funk = builtin("funk");
        // vanishes where y is parallel to the Randers 1-form x/(1 − r²), so probe off that line
        assert!(cartan_tensor(&funk, &[0.5, 0.0], &[1.0, 0.0]).unwrap().max_abs() <= 1e-12);
        let c = cartan_tensor(&funk, &[0.5, 0.0], &[1.0, 0.3]).unwrap();
        assert!(c.max_abs() > 1e-3);
        assert!(c.contract(&[1.0, 0.3]).amax() <= 1e-9);
        let c1 = cartan_tensor(&funk, &x, &y).unwrap();
        let c2 = cartan_tensor(&funk, &x, &[2.5 * y[0], 2.5 * y[1]]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!((c2.get(i, j, k) - c1.get(i, j, k) / 2.5).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn verdicts() {
        let samples: Vec<MetricSample> = [([0.3, 0.1, -0.2], [1.0, 0.2, 0.4]), ([-0.5, 0.4, 0.1], [0.1, -0.9, 0.3])]
            .iter()
            .map(|(x, y)| MetricSample::new(x.to_vec(), y.to_vec()).unwrap())
            .collect();
        let klein = Metric::from(SphericalMetric::builtin("klein", &BTreeMap::new()).unwrap());
        let v = symmetry_verdict(&klein, &samples, SYMMETRY_TOL).unwrap();
        assert!(v.consistent && v.fields_tested == 3);

        let v = symmetry_verdict(&anisotropic(3), &samples, SYMMETRY_TOL).unwrap();
        assert!(!v.consistent && v.max_residual > 0.1);
        assert_eq!(v.worst_field.unwrap().i, 0);

        // the (2,3) generator fixes axis 1 and so preserves the anisotropic metric
        let f23 = RotationField::new(1, 2, 3).unwrap();
        for s in &samples {
            assert!(killing_scalar_residual(&anisotropic(3), &f23, &s.x, &s.y).unwrap() <= 1e-9);
        }
    }
}
