//! Rate adaptation.
//!
//! For fixed Mellin parameters `(s1, s2)` the policy problem is
//!
//! ```text
//! minimize   M_S2(1 - s2)
//! subject to M_S1(1 - s1) <= budget
//! ```
//!
//! where `budget` keeps user 1's kernel at `s1` below its target. The
//! [`RateOptimizer`] implementations solve it for the different system
//! models, and [`outer`] searches over `(s1, s2)`.

mod grid;
mod joint;
mod knapsack;
mod oma;
pub mod outer;

pub use grid::{GridSearch, RateWindows};
pub use joint::{joint_closed_form, joint_kkt_residual, JointClosedForm};
pub use knapsack::{greedy_knapsack, knapsack_items, optimize_sic_pcsi, KnapsackItem, KnapsackSolution, SicKnapsack};
pub use oma::{oma_bound, oma_eps, oma_max_arrival, oma_policy, OmaUser};
pub use outer::{outer_loop, Objective, OuterConfig, OuterResult, UserOne};

use serde::{Deserialize, Serialize};

use crate::channel::RatePair;
use crate::csi::GridPoint;
use crate::errors::ErrorPair;
use crate::snc::{log_service_term, ServiceAtom, ServiceSpec};
use crate::Result;

/// Rates and error probabilities chosen at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub prob: f64,
    pub rho_hat: [f64; 2],
    pub rates: RatePair,
    pub eps: ErrorPair,
}

/// Parameters a policy was optimized at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub s: [f64; 2],
    /// Lagrange multiplier on user 1's Mellin transform. For the joint
    /// closed form this is the rate offset `lambda_tilde` instead.
    pub lambda: f64,
}

/// A rate-adaptation policy over a quantized SNR distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePolicy {
    pub n_d: f64,
    pub points: Vec<PolicyPoint>,
    pub params: PolicyParams,
}

impl RatePolicy {
    /// `ln M_S(1 - s)` of `user` (0-based).
    pub fn log_mellin(&self, user: usize, s: f64) -> f64 {
        let x = s * self.n_d;
        let mut acc = f64::NEG_INFINITY;
        for p in &self.points {
            if p.prob > 0.0 {
                let r = p.rates.as_array()[user];
                let t = p.prob.ln() + log_service_term(p.eps.get(user), x * r);
                acc = crate::snc::log_add_exp(acc, t);
            }
        }
        acc
    }

    pub fn service(&self, user: usize) -> ServiceSpec {
        ServiceSpec {
            n_d: self.n_d,
            atoms: self
                .points
                .iter()
                .map(|p| ServiceAtom { prob: p.prob, rate: p.rates.as_array()[user], eps: p.eps.get(user) })
                .collect(),
        }
    }

    /// Expected number of bits delivered per slot to `user`.
    pub fn mean_bits(&self, user: usize) -> f64 {
        self.service(user).mean_bits()
    }
}

/// Solves the inner problem for fixed Mellin parameters.
pub trait RateOptimizer: Sync {
    fn n_d(&self) -> f64;

    fn points(&self) -> &[GridPoint];

    /// Policy minimizing user 2's Mellin transform at `s[1]` while keeping
    /// `ln M_S1(1 - s[0]) <= log_budget`.
    fn constrained(&self, s: [f64; 2], log_budget: f64) -> Result<RatePolicy>;

    /// Policy minimizing user 2's Mellin transform alone.
    fn unconstrained(&self, s: [f64; 2]) -> Result<RatePolicy> {
        self.constrained(s, 0.0)
    }
}

/// `E[log2(1 + gamma_k)]` over the grid, used to scale the `s` search.
pub(crate) fn mean_max_rate(points: &[GridPoint], user: usize) -> f64 {
    points.iter().map(|p| p.prob * crate::channel::r_max(p.rho_hat[user])).sum()
}
