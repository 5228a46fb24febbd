//! Binomial proportion estimates with Wilson score intervals.

use serde::{Deserialize, Serialize};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// An observed frequency `count / trials` with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub count: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Proportion {
    pub fn new(count: u64, trials: u64) -> Self {
        let (lo, hi) = wilson_interval(count, trials, Z95);
        let estimate = if trials == 0 { 0.0 } else { count as f64 / trials as f64 };
        Self { count, trials, estimate, lo, hi }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn overlaps(&self, other: &Proportion) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Wilson score interval for `count` successes in `trials`.
///
/// Returns `(0, 1)` when there are no trials.
pub fn wilson_interval(count: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = count as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if count == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if count == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}
