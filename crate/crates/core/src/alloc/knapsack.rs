//! Decoding-order selection for SIC under perfect CSI as a 0-1 knapsack.
//!
//! Every grid point starts at corner A (user 2 decoded first, user 1
//! interference-free). Switching a point to corner B lowers user 2's Mellin
//! transform by `v_i` and raises user 1's by `w_i`. Items are taken greedily
//! by value-to-weight ratio; the first item that does not fit is dropped
//! along with everything after it.

use std::cmp::Ordering;

use crate::channel::{r_max, r_min, DecodingOrder, RatePair};
use crate::csi::GridPoint;
use crate::errors::ErrorPair;
use crate::{Error, Result};

use super::{PolicyParams, PolicyPoint, RateOptimizer, RatePolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnapsackItem {
    pub index: usize,
    pub value: f64,
    pub weight: f64,
}

impl KnapsackItem {
    pub fn ratio(&self) -> f64 {
        if self.weight > 0.0 {
            self.value / self.weight
        } else {
            f64::INFINITY
        }
    }
}

/// `e^{-a} - e^{-b}` for `a <= b` without cancellation.
fn exp_diff(a: f64, b: f64) -> f64 {
    (-a).exp() * -(-(b - a)).exp_m1()
}

/// Items of the knapsack and user 1's Mellin transform with every point at
/// corner A.
pub fn knapsack_items(points: &[GridPoint], s: [f64; 2], n_d: f64) -> (Vec<KnapsackItem>, f64) {
    let mut base = 0.0;
    let items = points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let [g1, g2] = p.rho_hat;
            let (r1_lo, r1_hi) = (r_min(g1, g2), r_max(g1));
            let (r2_lo, r2_hi) = (r_min(g2, g1), r_max(g2));
            base += p.prob * (-s[0] * n_d * r1_hi).exp();
            KnapsackItem {
                index,
                value: p.prob * exp_diff(s[1] * n_d * r2_lo, s[1] * n_d * r2_hi),
                weight: p.prob * exp_diff(s[0] * n_d * r1_lo, s[0] * n_d * r1_hi),
            }
        })
        .collect();
    (items, base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    /// Whether each item (by original index) is taken.
    pub selected: Vec<bool>,
    /// Value of the rounded solution.
    pub value: f64,
    /// Value of the continuous relaxation.
    pub relaxed_value: f64,
    pub weight: f64,
    /// Item left out by rounding and its fractional share in the relaxation.
    pub split: Option<(usize, f64)>,
    /// Value-to-weight ratio of the split item, 0 if everything fits.
    pub threshold: f64,
}

/// Dantzig's greedy solution, rounded down. Ties in the ratio are broken by
/// item index; zero-weight items come first.
pub fn greedy_knapsack(items: &[KnapsackItem], budget: f64) -> Result<KnapsackSolution> {
    if !(budget >= 0.0) {
        return Err(Error::Infeasible(format!("knapsack budget {budget} is negative")));
    }
    let mut order: Vec<&KnapsackItem> = items.iter().collect();
    order.sort_by(|a, b| {
        b.ratio()
            .partial_cmp(&a.ratio())
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    let mut selected = vec![false; items.iter().map(|i| i.index + 1).max().unwrap_or(0)];
    let (mut value, mut weight) = (0.0, 0.0);
    let mut split = None;
    let mut relaxed_value = 0.0;
    let mut threshold = 0.0;
    for it in order {
        if weight + it.weight <= budget {
            selected[it.index] = true;
            value += it.value;
            weight += it.weight;
        } else {
            let x = (budget - weight) / it.weight;
            relaxed_value = value + x * it.value;
            split = Some((it.index, x));
            threshold = it.ratio();
            break;
        }
    }
    if split.is_none() {
        relaxed_value = value;
    }
    Ok(KnapsackSolution { selected, value, relaxed_value, weight, split, threshold })
}

fn corner_policy(points: &[GridPoint], user1_first: &[bool], n_d: f64, params: PolicyParams) -> RatePolicy {
    let points = points
        .iter()
        .zip(user1_first)
        .map(|(p, &b)| {
            let [g1, g2] = p.rho_hat;
            let rates = if b {
                RatePair { r_1: r_min(g1, g2), r_2: r_max(g2), order: DecodingOrder::User1First }
            } else {
                RatePair { r_1: r_max(g1), r_2: r_min(g2, g1), order: DecodingOrder::User2First }
            };
            PolicyPoint { prob: p.prob, rho_hat: p.rho_hat, rates, eps: ErrorPair::both(0.0) }
        })
        .collect();
    RatePolicy { n_d, points, params }
}

/// SIC policy under perfect CSI for a budget on the increase of user 1's
/// Mellin transform over the all-corner-A policy.
///
/// A budget at or above the total weight selects every point.
pub fn optimize_sic_pcsi(points: &[GridPoint], s1: f64, s2: f64, n_d: f64, budget: f64) -> Result<RatePolicy> {
    let (items, _) = knapsack_items(points, [s1, s2], n_d);
    let sol = greedy_knapsack(&items, budget)?;
    let params = PolicyParams { s: [s1, s2], lambda: sol.threshold };
    Ok(corner_policy(points, &sol.selected, n_d, params))
}

/// Knapsack optimizer for SIC with perfect CSI and infinite blocklength.
#[derive(Debug, Clone)]
pub struct SicKnapsack {
    pub points: Vec<GridPoint>,
    pub n_d: f64,
}

impl RateOptimizer for SicKnapsack {
    fn n_d(&self) -> f64 {
        self.n_d
    }

    fn points(&self) -> &[GridPoint] {
        &self.points
    }

    fn constrained(&self, s: [f64; 2], log_budget: f64) -> Result<RatePolicy> {
        let (items, base) = knapsack_items(&self.points, s, self.n_d);
        let budget = log_budget.exp() - base;
        // Tolerates the round trip of `base` through the log domain.
        if budget < -1e-12 * base {
            return Err(Error::Infeasible(format!(
                "user 1 needs ln M_S <= {log_budget}, but all-corner-A gives {}",
                base.ln()
            )));
        }
        let sol = greedy_knapsack(&items, budget.max(0.0))?;
        let params = PolicyParams { s, lambda: sol.threshold };
        Ok(corner_policy(&self.points, &sol.selected, self.n_d, params))
    }
}
