//! Geodesic spray and fixed-step RK4 integration of `ẍ = −2G(x, ẋ)`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::Error;
use crate::metric::{norm, Metric};
use crate::projective::projective_factor_xy;

/// Default tolerance on [`straightness_deviation`].
pub const STRAIGHTNESS_TOL: f64 = 1e-6;

/// Fraction of a finite domain radius geodesic checks stay within.
pub const SAFE_RADIUS_FRACTION: f64 = 0.95;

/// Working radius of geodesic checks on unbounded domains. Geodesics of
/// projective charts of compact models reach infinity in finite time.
pub const UNBOUNDED_RADIUS: f64 = 10.0;

/// Radius geodesic checks confine themselves to.
pub fn safe_radius(metric: &Metric) -> f64 {
    let r = metric.domain_radius();
    if r.is_finite() {
        SAFE_RADIUS_FRACTION * r
    } else {
        UNBOUNDED_RADIUS
    }
}

#[derive(Debug, Error)]
pub enum GeodesicError {
    #[error("geodesic left the domain at t = {time}")]
    DomainExit { time: f64, path: GeodesicPath },
    #[error(transparent)]
    Metric(#[from] Error),
}

/// `Gⁱ = ¼ gⁱˡ ([F²]_{xᵏyˡ} yᵏ − [F²]_{xˡ})`.
pub fn spray_general(metric: &Metric, x: &[f64], y: &[f64]) -> Result<Vec<f64>, Error> {
    Ok(spray_with_scale(metric, x, y)?.0)
}

/// The spray and the size its components would have without cancellation in the
/// right-hand side, `¼ |g⁻¹| Σ|terms|`.
fn spray_with_scale(metric: &Metric, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, f64), Error> {
    let n = x.len();
    let f = metric.xy_jet(x, y, 2)?;
    let f2 = f.square();
    let g = DMatrix::from_fn(n, n, |i, l| 0.5 * f2.hess(n + i, n + l));
    let rhs = DVector::from_fn(n, |l, _| (0..n).map(|k| f2.hess(k, n + l) * y[k]).sum::<f64>() - f2.grad(l));
    let magnitude =
        DVector::from_fn(n, |l, _| (0..n).map(|k| (f2.hess(k, n + l) * y[k]).abs()).sum::<f64>() + f2.grad(l).abs());
    let chol = g.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let sol = chol.solve(&rhs);
    let scale = 0.25 * (chol.inverse().abs() * magnitude).norm();
    Ok((sol.iter().map(|s| 0.25 * s).collect(), scale))
}

/// `|G − P y| / (|G| + |P y| + s)` with `s` the cancellation-free size of `G`;
/// zero exactly when the spray is `P y`.
pub fn spray_projectivity_residual(metric: &Metric, x: &[f64], y: &[f64]) -> Result<f64, Error> {
    let (g, floor) = spray_with_scale(metric, x, y)?;
    let p = projective_factor_xy(metric, x, y)?;
    let py: Vec<f64> = y.iter().map(|c| p * c).collect();
    let diff: Vec<f64> = g.iter().zip(&py).map(|(a, b)| a - b).collect();
    let scale = norm(&g) + norm(&py) + floor;
    Ok(if scale == 0.0 { 0.0 } else { norm(&diff) / scale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl GeodesicPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end(&self) -> Option<&[f64]> {
        self.points.last().map(Vec::as_slice)
    }

    /// CSV with header `t,x1..xn,y1..yn`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.points.first().map_or(0, Vec::len);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .chain((1..=n).map(|i| format!("y{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for ((t, p), v) in self.times.iter().zip(&self.points).zip(&self.velocities) {
            let row: Vec<String> = std::iter::once(t).chain(p).chain(v).map(|c| format!("{c:.16e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn acceleration(metric: &Metric, x: &[f64], y: &[f64]) -> Result<Vec<f64>, Error> {
    Ok(spray_general(metric, x, y)?.into_iter().map(|g| -2.0 * g).collect())
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(y, x)| y + a * x).collect()
}

/// Classical RK4 with `steps` uniform steps over `[0, horizon]`.
pub fn integrate_geodesic(
    metric: &Metric,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<GeodesicPath, GeodesicError> {
    integrate_within(metric, x0, y0, horizon, steps, metric.domain_radius())
}

/// As [`integrate_geodesic`], treating `|x| ≥ radius` at any stage as leaving the domain.
pub fn integrate_within(
    metric: &Metric,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    steps: usize,
    radius: f64,
) -> Result<GeodesicPath, GeodesicError> {
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidParameter("geodesic needs steps >= 1 and horizon > 0".into()).into());
    }
    let h = horizon / steps as f64;
    let mut path = GeodesicPath { times: vec![0.0], points: vec![x0.to_vec()], velocities: vec![y0.to_vec()] };
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    for step in 0..steps {
        let t = step as f64 * h;
        let stage = |x: &[f64], y: &[f64]| {
            if norm(x) < radius {
                acceleration(metric, x, y)
            } else {
                Err(Error::OutsideDomain { r: norm(x), radius })
            }
        };
        let result = (|| -> Result<(Vec<f64>, Vec<f64>), Error> {
            let a1 = stage(&x, &y)?;
            let (x2, y2) = (axpy(0.5 * h, &y, &x), axpy(0.5 * h, &a1, &y));
            let a2 = stage(&x2, &y2)?;
            let (x3, y3) = (axpy(0.5 * h, &y2, &x), axpy(0.5 * h, &a2, &y));
            let a3 = stage(&x3, &y3)?;
            let (x4, y4) = (axpy(h, &y3, &x), axpy(h, &a3, &y));
            let a4 = stage(&x4, &y4)?;
            let nx = (0..x.len()).map(|i| x[i] + h / 6.0 * (y[i] + 2.0 * y2[i] + 2.0 * y3[i] + y4[i])).collect();
            let ny = (0..y.len()).map(|i| y[i] + h / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])).collect();
            Ok((nx, ny))
        })();
        let (nx, ny) = match result {
            Ok(next) => next,
            Err(Error::OutsideDomain { .. }) => return Err(GeodesicError::DomainExit { time: t, path }),
            Err(e) => return Err(e.into()),
        };
        if !(norm(&nx) < radius) {
            return Err(GeodesicError::DomainExit { time: t + h, path });
        }
        x = nx;
        y = ny;
        path.times.push((step + 1) as f64 * h);
        path.points.push(x.clone());
        path.velocities.push(y.clone());
    }
    Ok(path)
}

/// Largest distance from the line `{x0 + s·y0}` over the path, divided by the
/// path's polyline length.
pub fn straightness_deviation(path: &GeodesicPath, x0: &[f64], y0: &[f64]) -> f64 {
    let dir_norm = norm(y0);
    let dir: Vec<f64> = y0.iter().map(|c| c / dir_norm).collect();
    let mut worst: f64 = 0.0;
    for p in &path.points {
        let d: Vec<f64> = p.iter().zip(x0).map(|(a, b)| a - b).collect();
        let along: f64 = d.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let perp: Vec<f64> = d.iter().zip(&dir).map(|(a, b)| a - along * b).collect();
        worst = worst.max(norm(&perp));
    }
    let length: f64 =
        path.points.windows(2).map(|w| norm(&w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect::<Vec<_>>())).sum();
    if length == 0.0 {
        0.0
    } else {
        worst / length
    }
}

/// Integrates a geodesic, halving the horizon until the path stays within
/// [`safe_radius`]. Returns the path and its straightness deviation.
pub fn checked_geodesic(
    metric: &Metric,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<(GeodesicPath, f64), GeodesicError> {
    let limit = safe_radius(metric);
    let mut horizon = horizon;
    for _ in 0..40 {
        match integrate_within(metric, x0, y0, horizon, steps, limit) {
            Ok(path) => {
                let dev = straightness_deviation(&path, x0, y0);
                return Ok((path, dev));
            }
            Err(GeodesicError::DomainExit { .. }) => horizon *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidParameter("could not fit the geodesic inside the domain".into()).into())
}

/// Endpoint errors at `steps` and `2·steps` against an `8·steps` reference, and their ratio.
pub fn rk4_convergence(
    metric: &Metric,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<(f64, f64, f64), GeodesicError> {
    let end = |k: usize| -> Result<Vec<f64>, GeodesicError> {
        let path = integrate_geodesic(metric, x0, y0, horizon, k)?;
        Ok(path.end().expect("nonempty path").to_vec())
    };
    let reference = end(8 * steps)?;
    let err = |p: Vec<f64>| norm(&p.iter().zip(&reference).map(|(a, b)| a - b).collect::<Vec<_>>());
    let coarse = err(end(steps)?);
    let fine = err(end(2 * steps)?);
    Ok((coarse, fine, coarse / fine))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::metric::SphericalMetric;

    fn builtin(name: &str) -> Metric {
        Metric::builtin(name, &BTreeMap::new()).unwrap()
    }

    fn curved() -> Metric {
        Metric::from(SphericalMetric::from_phi_expr("u(1+r^2)", "u*(1+r^2)", f64::INFINITY).unwrap())
    }

    #[test]
    fn sprays() {
        let g = spray_general(&builtin("euclidean"), &[0.3, 0.2], &[1.0, -0.5]).unwrap();
        assert!(g.iter().all(|c| c.abs() < 1e-15));
        let g = spray_general(&builtin("funk"), &[0.5, 0.0], &[1.0, 0.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12, "{g:?}");
        assert!(spray_projectivity_residual(&builtin("klein"), &[0.5, 0.0], &[0.0, 1.0]).unwrap() <= 1e-8);
        assert_eq!(spray_projectivity_residual(&builtin("euclidean"), &[0.5, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(spray_projectivity_residual(&curved(), &[0.5, 0.2], &[0.3, 1.0]).unwrap() > 1e-3);
    }

    #[test]
    fn spray_is_two_homogeneous() {
        let m = builtin("berwald");
        let (x, y) = ([0.2, -0.3], [0.7, 0.4]);
        let g1 = spray_general(&m, &x, &y).unwrap();
        for lam in [0.5, 2.0] {
            let g2 = spray_general(&m, &x, &[lam * y[0], lam * y[1]]).unwrap();
            for (a, b) in g1.iter().zip(&g2) {
                assert!((lam * lam * a - b).abs() <= 1e-9 * b.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn euclidean_geodesic_is_uniform_line() {
        let path = integrate_geodesic(&builtin("euclidean"), &[0.1, 0.2], &[1.0, 2.0], 1.0, 10).unwrap();
        let end = path.end().unwrap();
        assert!((end[0] - 1.1).abs() < 1e-14 && (end[1] - 2.2).abs() < 1e-14);
        assert!(straightness_deviation(&path, &[0.1, 0.2], &[1.0, 2.0]) <= 1e-15);
    }

    #[test]
    fn funk_geodesic_is_straight() {
        let (x0, y0) = ([0.1, 0.2], [0.6, -0.3]);
        let path = integrate_geodesic(&builtin("funk"), &x0, &y0, 0.5, 2000).unwrap();
        assert_eq!(path.len(), 2001);
        assert!(straightness_deviation(&path, &x0, &y0) <= 1e-6);
    }

    #[test]
    fn circle_arc_deviation() {
        let k = 2000;
        let points: Vec<Vec<f64>> = (0..=k)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64 / k as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let path = GeodesicPath { times: (0..=k).map(|i| i as f64).collect(), velocities: points.clone(), points };
        let dev = straightness_deviation(&path, &[1.0, 0.0], &[-1.0, 1.0]);
        let expect = (1.0 - std::f64::consts::FRAC_1_SQRT_2) / std::f64::consts::FRAC_PI_2;
        assert!((dev - expect).abs() < 1e-6, "{dev} vs {expect}");
    }

    #[test]
    fn domain_exit_keeps_partial_path() {
        match integrate_geodesic(&builtin("klein"), &[0.5, 0.0], &[1.0, 0.0], 50.0, 100) {
            Err(GeodesicError::DomainExit { time, path }) => {
                assert!(time > 0.0 && !path.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rk4_order_on_curved_metric() {
        let (coarse, fine, ratio) = rk4_convergence(&curved(), &[0.5, 0.1], &[0.2, 1.0], 1.0, 20).unwrap();
        assert!(coarse > 1e-10 && fine > 0.0);
        assert!(ratio >= 8.0, "{ratio}");
    }

    #[test]
    fn csv_dump() {
        let path = integrate_geodesic(&builtin("euclidean"), &[0.5, 0.0], &[1.0, 0.0], 1.0, 2).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,y1,y2"));
        assert_eq!(lines.next(), Some("0.0000000000000000e0,5.0000000000000000e-1,0.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0"));
        assert_eq!(text.lines().count(), 4);
    }
}
