//! Imperfect channel knowledge: MMSE estimation statistics, the Gaussian
//! approximation of the true SNR given its estimate, exact-model sampling,
//! and the quantized grid of estimated SNR pairs used by the optimizers.
//!
//! With `h = h_hat + z`, the MMSE estimate `h_hat ~ CN(0, 1 - s2)` is
//! independent of the error `z ~ CN(0, s2)`, where
//! `s2 = 1 / (1 + rho_tr * n_tr)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::sample_complex_normal;
use crate::{Error, Result};

/// Pilot configuration for both users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Training symbols per user.
    pub n_tr: [u32; 2],
    /// Training SNR per user, linear.
    pub rho_tr: [f64; 2],
}

impl TrainingConfig {
    pub fn new(n_tr: [u32; 2], rho_tr: [f64; 2]) -> Result<Self> {
        for r in rho_tr {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::invalid(format!("training SNR must be finite and >= 0, got {r}")));
            }
        }
        Ok(Self { n_tr, rho_tr })
    }

    pub fn sigma_z2(&self) -> [f64; 2] {
        [
            estimation_error_variance(self.rho_tr[0], self.n_tr[0]),
            estimation_error_variance(self.rho_tr[1], self.n_tr[1]),
        ]
    }

    pub fn total_symbols(&self) -> u32 {
        self.n_tr[0] + self.n_tr[1]
    }
}

/// Estimated SNRs and the standard deviations of the Gaussian approximation
/// of the true SNRs around them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatedState {
    pub rho_hat: [f64; 2],
    pub sigma_ic: [f64; 2],
}

impl EstimatedState {
    pub fn new(rho_hat: [f64; 2], sigma_ic: [f64; 2]) -> Result<Self> {
        for v in rho_hat.iter().chain(sigma_ic.iter()) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::invalid(format!(
                    "estimated state entries must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self { rho_hat, sigma_ic })
    }

    /// Builds the state from estimates, average SNRs and error variances.
    pub fn from_estimates(rho_hat: [f64; 2], rho_bar: [f64; 2], sigma_z2: [f64; 2]) -> Result<Self> {
        let sigma_ic = [
            icsi_stddev(rho_bar[0], rho_hat[0], sigma_z2[0]),
            icsi_stddev(rho_bar[1], rho_hat[1], sigma_z2[1]),
        ];
        Self::new(rho_hat, sigma_ic)
    }

    /// Perfect knowledge of the SNR pair.
    pub fn perfect(gamma: [f64; 2]) -> Self {
        Self { rho_hat: gamma, sigma_ic: [0.0, 0.0] }
    }
}

/// MMSE estimation error variance `1 / (1 + rho_tr * n_tr)`.
pub fn estimation_error_variance(rho_tr: f64, n_tr: u32) -> f64 {
    1.0 / (1.0 + rho_tr * n_tr as f64)
}

/// Standard deviation `sqrt(2 * rho_bar * rho_hat * sigma_z2)` of the true
/// SNR around its estimate.
pub fn icsi_stddev(rho_bar: f64, rho_hat: f64, sigma_z2: f64) -> f64 {
    (2.0 * rho_bar * rho_hat * sigma_z2).sqrt()
}

/// Draws an estimated SNR and the true SNR from the exact estimation model.
///
/// Returns `(rho_hat, gamma)` with `rho_hat = rho_bar |h_hat|^2` and
/// `gamma = rho_bar |h_hat + z|^2`.
pub fn sample_exact<R: Rng + ?Sized>(rho_bar: f64, sigma_z2: f64, rng: &mut R) -> (f64, f64) {
    let (hr, hi) = sample_complex_normal(1.0 - sigma_z2, rng);
    let rho_hat = rho_bar * (hr * hr + hi * hi);
    if sigma_z2 == 0.0 {
        return (rho_hat, rho_hat);
    }
    let (zr, zi) = sample_complex_normal(sigma_z2, rng);
    let (gr, gi) = (hr + zr, hi + zi);
    (rho_hat, rho_bar * (gr * gr + gi * gi))
}

/// Draws the true SNR given the estimate under the exact model.
///
/// By circular symmetry the estimated coefficient can be taken real, so
/// `gamma = rho_bar |sqrt(rho_hat / rho_bar) + z|^2`.
pub fn sample_conditional<R: Rng + ?Sized>(
    rho_bar: f64,
    sigma_z2: f64,
    rho_hat: f64,
    rng: &mut R,
) -> f64 {
    if sigma_z2 == 0.0 {
        return rho_hat;
    }
    let a = (rho_hat / rho_bar).sqrt();
    let (zr, zi) = sample_complex_normal(sigma_z2, rng);
    rho_bar * ((a + zr) * (a + zr) + zi * zi)
}

/// Equiprobable quantization of one exponential marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalGrid {
    /// Average SNR of the underlying channel.
    pub rho_bar: f64,
    /// Estimation error variance.
    pub sigma_z2: f64,
    /// Point of each cell, at the conditional mean of the cell.
    pub points: Vec<f64>,
}

impl MarginalGrid {
    pub fn build(rho_bar: f64, sigma_z2: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 points per axis, got {n}")));
        }
        if !(rho_bar.is_finite() && rho_bar > 0.0) {
            return Err(Error::invalid(format!("average SNR must be positive, got {rho_bar}")));
        }
        if !(0.0..=1.0).contains(&sigma_z2) {
            return Err(Error::invalid(format!("error variance must lie in [0,1], got {sigma_z2}")));
        }
        let m = rho_bar * (1.0 - sigma_z2);
        let nf = n as f64;
        let edge = |j: usize| -m * (-(j as f64) / nf).ln_1p();
        let points = (0..n)
            .map(|j| {
                let a = edge(j);
                if m == 0.0 {
                    0.0
                } else if j + 1 == n {
                    a + m
                } else {
                    // E[X | a <= X < b] for X ~ Exp(mean m), cell mass 1/n.
                    let b = edge(j + 1);
                    let (ta, tb) = (1.0 - j as f64 / nf, 1.0 - (j + 1) as f64 / nf);
                    m + nf * (a * ta - b * tb)
                }
            })
            .collect();
        Ok(Self { rho_bar, sigma_z2, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean of the estimated SNR.
    pub fn mean(&self) -> f64 {
        self.rho_bar * (1.0 - self.sigma_z2)
    }

    pub fn prob(&self) -> f64 {
        1.0 / self.points.len() as f64
    }

    /// Index of the quantile cell containing `rho_hat`.
    pub fn cell_of(&self, rho_hat: f64) -> usize {
        let m = self.mean();
        if m == 0.0 || rho_hat <= 0.0 {
            return 0;
        }
        let u = -(-rho_hat / m).exp_m1();
        ((u * self.len() as f64) as usize).min(self.len() - 1)
    }

    pub fn sigma_ic(&self, j: usize) -> f64 {
        icsi_stddev(self.rho_bar, self.points[j], self.sigma_z2)
    }
}

/// One point of the joint grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub rho_hat: [f64; 2],
    pub sigma_ic: [f64; 2],
    pub prob: f64,
}

impl GridPoint {
    pub fn state(&self) -> EstimatedState {
        EstimatedState { rho_hat: self.rho_hat, sigma_ic: self.sigma_ic }
    }
}

/// Quantized joint distribution of the estimated SNR pair.
///
/// The two estimates are independent, so the grid is the product of two
/// equiprobable marginals. Point `i` is `(axes[0][i / n2], axes[1][i % n2])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrGrid {
    pub axes: [MarginalGrid; 2],
}

/// Builds the product grid of estimated SNR pairs.
pub fn build_grid(rho_bar: [f64; 2], sigma_z2: [f64; 2], points_per_axis: usize) -> Result<SnrGrid> {
    Ok(SnrGrid {
        axes: [
            MarginalGrid::build(rho_bar[0], sigma_z2[0], points_per_axis)?,
            MarginalGrid::build(rho_bar[1], sigma_z2[1], points_per_axis)?,
        ],
    })
}

impl SnrGrid {
    pub fn len(&self) -> usize {
        self.axes[0].len() * self.axes[1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rho_bar(&self) -> [f64; 2] {
        [self.axes[0].rho_bar, self.axes[1].rho_bar]
    }

    pub fn sigma_z2(&self) -> [f64; 2] {
        [self.axes[0].sigma_z2, self.axes[1].sigma_z2]
    }

    pub fn is_perfect(&self) -> bool {
        self.axes[0].sigma_z2 == 0.0 && self.axes[1].sigma_z2 == 0.0
    }

    /// Splits a flat index into per-axis indices.
    pub fn split_index(&self, i: usize) -> (usize, usize) {
        let n2 = self.axes[1].len();
        (i / n2, i % n2)
    }

    pub fn point(&self, i: usize) -> GridPoint {
        let (i1, i2) = self.split_index(i);
        let total = self.len() as f64;
        GridPoint {
            rho_hat: [self.axes[0].points[i1], self.axes[1].points[i2]],
            sigma_ic: [self.axes[0].sigma_ic(i1), self.axes[1].sigma_ic(i2)],
            prob: 1.0 / total,
        }
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = GridPoint> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn to_points(&self) -> Vec<GridPoint> {
        self.points().collect()
    }

    /// Flat index of the cell containing the estimate pair.
    pub fn cell_of(&self, rho_hat: [f64; 2]) -> usize {
        self.axes[0].cell_of(rho_hat[0]) * self.axes[1].len() + self.axes[1].cell_of(rho_hat[1])
    }
}
