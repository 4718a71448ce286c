//! Adaptive Gauss–Legendre quadrature for vector-valued integrands.
//!
//! Each interval is estimated with a fixed Gauss–Legendre rule and compared against
//! the sum of the same rule on its two halves.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Points in the fixed rule.
pub const GAUSS_POINTS: usize = 10;

/// Cap on the number of live intervals.
const MAX_INTERVALS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub max_depth: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { abs_tol: 1e-12, max_depth: 40 }
    }
}

/// Nodes and weights on [-1, 1], by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // three-term recurrence: p1 = P_n(z), p2 = P_{n-1}(z)
            let (mut p1, mut p2) = (1.0, 0.0);
            for k in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * k - 1) as f64 * z * p2 - (k - 1) as f64 * p3) / k as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GAUSS_POINTS))
}

fn fixed<F>(f: &mut F, a: f64, b: f64, ncomp: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let (nodes, weights) = rule();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = vec![0.0; ncomp];
    for (x, w) in nodes.iter().zip(weights) {
        let vals = f(mid + half * x)?;
        for (s, v) in acc.iter_mut().zip(&vals) {
            *s += w * half * v;
        }
    }
    Ok(acc)
}

struct Piece {
    lo: f64,
    hi: f64,
    depth: usize,
    est: Vec<f64>,
    err: Vec<f64>,
    key: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Piece {}

impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then(other.lo.total_cmp(&self.lo))
    }
}

fn piece<F>(f: &mut F, lo: f64, hi: f64, depth: usize, ncomp: usize, coarse: Vec<f64>) -> Result<Piece>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let mid = 0.5 * (lo + hi);
    let left = fixed(f, lo, mid, ncomp)?;
    let right = fixed(f, mid, hi, ncomp)?;
    let est: Vec<f64> = left.iter().zip(&right).map(|(a, b)| a + b).collect();
    let err: Vec<f64> = est.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).collect();
    let key = err.iter().fold(0.0, |m: f64, e| m.max(*e));
    Ok(Piece { lo, hi, depth, est, err, key })
}

/// Integrates the `ncomp`-component function `f` over `[a, b]`.
///
/// Globally adaptive: the interval with the largest error estimate (rule vs. the
/// rule on both halves) is bisected until the summed error of every component is
/// within `opts.abs_tol`, or a few ulps of the summed magnitudes.
pub fn integrate<F>(mut f: F, a: f64, b: f64, ncomp: usize, opts: QuadratureOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    if b == a {
        return Ok(vec![0.0; ncomp]);
    }
    let coarse = fixed(&mut f, a, b, ncomp)?;
    let mut heap = BinaryHeap::new();
    heap.push(piece(&mut f, a, b, 0, ncomp, coarse)?);
    loop {
        let mut err = vec![0.0; ncomp];
        let mut mag = vec![0.0; ncomp];
        for p in &heap {
            for k in 0..ncomp {
                err[k] += p.err[k];
                mag[k] += p.est[k].abs();
            }
        }
        if (0..ncomp).all(|k| err[k] <= opts.abs_tol.max(64.0 * f64::EPSILON * mag[k])) {
            break;
        }
        let worst = heap.pop().expect("heap never empties");
        if worst.depth + 1 >= opts.max_depth || heap.len() + 2 > MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "no convergence on [{:e}, {:e}] after {} levels",
                worst.lo,
                worst.hi,
                worst.depth + 1
            )));
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        let left = fixed(&mut f, worst.lo, mid, ncomp)?;
        let right = fixed(&mut f, mid, worst.hi, ncomp)?;
        heap.push(piece(&mut f, worst.lo, mid, worst.depth + 1, ncomp, left)?);
        heap.push(piece(&mut f, mid, worst.hi, worst.depth + 1, ncomp, right)?);
    }
    let mut pieces = heap.into_vec();
    pieces.sort_by(|p, q| p.lo.total_cmp(&q.lo));
    let mut result = vec![0.0; ncomp];
    for p in &pieces {
        for (acc, e) in result.iter_mut().zip(&p.est) {
            *acc += e;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(GAUSS_POINTS);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for deg in 0..2 * GAUSS_POINTS {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn adaptive_handles_endpoint_behaviour() {
        // ∫₀¹ √t dt = 2/3, non-smooth at 0
        let opts = QuadratureOptions::default();
        let v = integrate(|t| Ok(vec![t.sqrt(), 1.0]), 0.0, 1.0, 2, opts).unwrap();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12, "{}", v[0]);
        assert!((v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn divergent_integrand_reports_non_convergence() {
        let opts = QuadratureOptions { abs_tol: 1e-12, max_depth: 12 };
        let r = integrate(|t| Ok(vec![1.0 / t]), 0.0, 1.0, 1, opts);
        assert!(matches!(r, Err(Error::Quadrature(_))));
    }
}
