//! Joint decoding under perfect CSI.
//!
//! The optimal pair lies on the dominant face `r1 + r2 = R_sum`. Setting the
//! derivative of the Lagrangian to zero gives
//! `r1 = s2/(s1+s2) R_sum + lambda_tilde`, clamped to the face.

use crate::channel::{r_max, r_min, r_sum, DecodingOrder, RatePair, SnrPair};
use crate::csi::GridPoint;
use crate::errors::ErrorPair;
use crate::{Error, Result};

use super::{PolicyParams, PolicyPoint, RateOptimizer, RatePolicy};

fn face(p: &GridPoint) -> (f64, f64, f64) {
    let [g1, g2] = p.rho_hat;
    (r_min(g1, g2), r_max(g1), r_sum(&SnrPair { gamma_1: g1, gamma_2: g2 }))
}

/// Joint-decoding policy for a given rate offset `lambda_tilde` (bits per
/// channel use).
pub fn joint_closed_form(points: &[GridPoint], s1: f64, s2: f64, n_d: f64, lambda_tilde: f64) -> RatePolicy {
    let share = s2 / (s1 + s2);
    let points = points
        .iter()
        .map(|p| {
            let (lo, hi, sum) = face(p);
            let r1 = (share * sum + lambda_tilde).clamp(lo, hi);
            let rates = RatePair { r_1: r1, r_2: (sum - r1).max(0.0), order: DecodingOrder::Joint };
            PolicyPoint { prob: p.prob, rho_hat: p.rho_hat, rates, eps: ErrorPair::both(0.0) }
        })
        .collect();
    RatePolicy { n_d, points, params: PolicyParams { s: [s1, s2], lambda: lambda_tilde } }
}

/// Largest relative stationarity residual
/// `|s2 e^{-s2 n r2} - lambda s1 e^{-s1 n r1}| / max(...)` over points whose
/// rate is strictly inside the face.
pub fn joint_kkt_residual(policy: &RatePolicy, lambda_tilde: f64) -> f64 {
    let [s1, s2] = policy.params.s;
    let n = policy.n_d;
    let ln_lambda = (s2 / s1).ln() + (s1 + s2) * n * lambda_tilde;
    policy
        .points
        .iter()
        .filter(|p| {
            let [g1, g2] = p.rho_hat;
            let r1 = p.rates.r_1;
            r1 > r_min(g1, g2) && r1 < r_max(g1)
        })
        .map(|p| {
            let a = s2.ln() - s2 * n * p.rates.r_2;
            let b = ln_lambda + s1.ln() - s1 * n * p.rates.r_1;
            -(-(a - b).abs()).exp_m1()
        })
        .fold(0.0, f64::max)
}

/// Closed-form optimizer for joint decoding with perfect CSI; the offset is
/// found by bisection.
#[derive(Debug, Clone)]
pub struct JointClosedForm {
    pub points: Vec<GridPoint>,
    pub n_d: f64,
}

impl RateOptimizer for JointClosedForm {
    fn n_d(&self) -> f64 {
        self.n_d
    }

    fn points(&self) -> &[GridPoint] {
        &self.points
    }

    fn constrained(&self, s: [f64; 2], log_budget: f64) -> Result<RatePolicy> {
        let reach = self.points.iter().map(|p| face(p).2).fold(0.0, f64::max) + 1.0;
        let eval = |lt: f64| joint_closed_form(&self.points, s[0], s[1], self.n_d, lt);
        let (mut lo, mut hi) = (-reach, reach);
        let top = eval(hi);
        if top.log_mellin(0, s[0]) > log_budget {
            return Err(Error::Infeasible(format!(
                "user 1 needs ln M_S <= {log_budget}, best policy gives {}",
                top.log_mellin(0, s[0])
            )));
        }
        let bottom = eval(lo);
        if bottom.log_mellin(0, s[0]) <= log_budget {
            return Ok(bottom);
        }
        let mut best = top;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let pol = eval(mid);
            let m = pol.log_mellin(0, s[0]);
            if m <= log_budget {
                hi = mid;
                let done = m >= log_budget - 1e-6;
                best = pol;
                if done {
                    break;
                }
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * reach {
                break;
            }
        }
        Ok(best)
    }
}
