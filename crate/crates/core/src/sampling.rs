//! Deterministic sampling of `(x, y)` pairs.
//!
//! Draw order for each sample, all from one SplitMix64 stream:
//!
//! 1. one uniform for `r`, mapped affinely onto `r_range`;
//! 2. the direction of `x`: `n` uniforms `wᵢ = 2U − 1` per attempt, accepted when
//!    `1e−6 ≤ |w|² ≤ 1`, then `x = r·w/|w|`;
//! 3. one uniform for `u`, mapped onto `u_range`;
//! 4. the direction of `y` as in step 2, then `y = u·w/|w|`.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::metric::MetricSample;

pub const MIN_R: f64 = 0.05;
pub const MAX_R: f64 = 2.0;
pub const U_RANGE: (f64, f64) = (0.1, 2.0);
/// Finite domains are sampled up to this fraction of their radius.
pub const BALL_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    pub r_range: (f64, f64),
    pub u_range: (f64, f64),
}

impl SampleSpec {
    /// The standard plan for a metric with the given domain radius.
    pub fn for_domain(n: usize, count: usize, seed: u64, domain_radius: f64) -> Self {
        SampleSpec { n, count, seed, r_range: (MIN_R, (BALL_FRACTION * domain_radius).min(MAX_R)), u_range: U_RANGE }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.n) {
            return Err(Error::InvalidParameter(format!("dimension must be 2, 3 or 4, got {}", self.n)));
        }
        if self.count == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        let (r0, r1) = self.r_range;
        if !(MIN_R <= r0 && r0 <= r1 && r1 <= MAX_R) {
            return Err(Error::InvalidParameter(format!("r range [{r0}, {r1}] outside [{MIN_R}, {MAX_R}]")));
        }
        let (u0, u1) = self.u_range;
        if !(U_RANGE.0 <= u0 && u0 <= u1 && u1 <= U_RANGE.1) {
            return Err(Error::InvalidParameter(format!("u range [{u0}, {u1}] outside {U_RANGE:?}")));
        }
        Ok(())
    }
}

/// Uniform on `[0, 1)` with 53 random bits.
pub fn uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn direction(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n).map(|_| 2.0 * uniform(rng) - 1.0).collect();
        let q: f64 = w.iter().map(|c| c * c).sum();
        if (1e-6..=1.0).contains(&q) {
            let len = q.sqrt();
            return w.into_iter().map(|c| c / len).collect();
        }
    }
}

pub fn sample_domain(spec: &SampleSpec) -> Result<Vec<MetricSample>> {
    spec.validate()?;
    let mut rng = SplitMix64::seed_from_u64(spec.seed);
    let lerp = |(a, b): (f64, f64), t: f64| a + (b - a) * t;
    (0..spec.count)
        .map(|_| {
            let r = lerp(spec.r_range, uniform(&mut rng));
            let x: Vec<f64> = direction(&mut rng, spec.n).into_iter().map(|c| r * c).collect();
            let u = lerp(spec.u_range, uniform(&mut rng));
            let y: Vec<f64> = direction(&mut rng, spec.n).into_iter().map(|c| u * c).collect();
            MetricSample::new(x, y)
        })
        .collect()
}
