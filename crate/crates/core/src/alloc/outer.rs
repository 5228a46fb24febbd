//! Search over the Mellin parameters `(s1, s2)`.
//!
//! For each pair, user 1's kernel at `s1` fixes a budget on its Mellin
//! transform, the inner optimizer returns the best policy under it, and the
//! policy is scored by user 2's delay bound (or its largest supported
//! arrival rate). A coarse log grid seeds alternating line searches on
//! `ln s2` and `ln s1`.

use std::collections::HashMap;

use crate::snc::{delay_bound, log_service_budget, max_arrival_exact, ArrivalSpec, DelayBound};
use crate::{Error, Result};

use super::{mean_max_rate, RateOptimizer, RatePolicy};

/// What the search optimizes for user 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Minimize `inf_s K(s, w)` at arrival rate `alpha`.
    MinBound { alpha: f64, w: u32 },
    /// Maximize the arrival rate meeting `target` at deadline `w`.
    MaxArrival { w: u32, target: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterConfig {
    /// Coarse grid points per axis.
    pub coarse: usize,
    /// Coarse grid spans `s_ref * 10^x` for `x` in this range.
    pub decades: (f64, f64),
    /// Scan points of each line search before golden-section refinement.
    pub line_points: usize,
    pub golden_steps: usize,
    /// Half width of a line search in `ln s`.
    pub line_width: f64,
    pub max_iter: usize,
    /// Relative improvement below which the search stops.
    pub rel_tol: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            coarse: 6,
            decades: (-1.0, 1.5),
            line_points: 5,
            golden_steps: 6,
            line_width: 1.0,
            max_iter: 50,
            rel_tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterResult {
    pub policy: RatePolicy,
    pub s: [f64; 2],
    /// User 1's bound at its own deadline, `<= target_1`.
    pub bound_1: DelayBound,
    /// User 2's bound at `alpha_2`.
    pub bound_2: DelayBound,
    /// The given arrival rate for [`Objective::MinBound`], the maximized one
    /// otherwise.
    pub alpha_2: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// User 1's requirement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserOne {
    pub alpha: f64,
    pub w: u32,
    pub target: f64,
}

struct Search<'a> {
    opt: &'a dyn RateOptimizer,
    user1: UserOne,
    objective: Objective,
    cache: HashMap<(u64, u64), f64>,
    best: Option<(f64, [f64; 2], RatePolicy)>,
}

impl Search<'_> {
    /// Score to minimize: `ln bound` or `-alpha`; `+inf` if infeasible.
    fn eval(&mut self, ls: [f64; 2]) -> f64 {
        let key = (ls[0].to_bits(), ls[1].to_bits());
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let s = [ls[0].exp(), ls[1].exp()];
        let policy = if self.user1.target >= 1.0 {
            self.opt.unconstrained(s)
        } else {
            let budget = log_service_budget(s[0] * self.user1.alpha, self.user1.w as f64, self.user1.target);
            if budget == f64::NEG_INFINITY {
                Err(Error::Infeasible("no budget".into()))
            } else {
                self.opt.constrained(s, budget)
            }
        };
        let v = match policy {
            Ok(p) => {
                let service = p.service(1);
                let v = match self.objective {
                    Objective::MinBound { alpha, w } => match delay_bound(&ArrivalSpec { alpha }, &service, w) {
                        Ok(b) if b.bound > 0.0 => b.bound.ln(),
                        Ok(_) => f64::NEG_INFINITY,
                        Err(_) => f64::INFINITY,
                    },
                    Objective::MaxArrival { w, target } => -max_arrival_exact(&service, w, target).0,
                };
                if self.best.as_ref().is_none_or(|b| v < b.0) {
                    self.best = Some((v, s, p));
                }
                v
            }
            Err(_) => f64::INFINITY,
        };
        self.cache.insert(key, v);
        v
    }

    fn improved(&self, old: f64, new: f64, tol: f64) -> bool {
        match self.objective {
            Objective::MinBound { .. } => new < old + (1.0 - tol).ln(),
            Objective::MaxArrival { .. } => -new > -old * (1.0 + tol),
        }
    }

    /// Scan then golden-section along one coordinate of `ln s`.
    fn line(&mut self, ls: [f64; 2], axis: usize, cfg: &OuterConfig) -> ([f64; 2], f64) {
        let n = cfg.line_points.max(3);
        let h = 2.0 * cfg.line_width / (n - 1) as f64;
        let at = |x: f64| {
            let mut p = ls;
            p[axis] = x;
            p
        };
        let x0 = ls[axis] - cfg.line_width;
        let mut best = (ls[axis], self.eval(ls));
        let mut scan = Vec::with_capacity(n);
        for i in 0..n {
            let x = x0 + h * i as f64;
            let v = self.eval(at(x));
            scan.push((x, v));
            if v < best.1 {
                best = (x, v);
            }
        }
        if best.1 == f64::INFINITY {
            return (ls, best.1);
        }
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (best.0 - h, best.0 + h);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (self.eval(at(c)), self.eval(at(d)));
        for _ in 0..cfg.golden_steps {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.eval(at(c));
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.eval(at(d));
            }
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v < best.1 {
                best = (x, v);
            }
        }
        (at(best.0), best.1)
    }
}

/// Alternating search over `(s1, s2)`.
///
/// `warm` replaces the coarse grid by a starting point. A `target` of user 1
/// at or above one removes its constraint.
pub fn outer_loop(
    opt: &dyn RateOptimizer,
    user1: UserOne,
    objective: Objective,
    cfg: &OuterConfig,
    warm: Option<[f64; 2]>,
) -> Result<OuterResult> {
    if !(user1.target > 0.0) || !(user1.alpha >= 0.0) {
        return Err(Error::invalid(format!("invalid user 1 requirement {user1:?}")));
    }
    let mut search = Search { opt, user1, objective, cache: HashMap::new(), best: None };
    let mut cur = match warm {
        Some(s) => {
            let ls = [s[0].ln(), s[1].ln()];
            (ls, search.eval(ls))
        }
        None => {
            let pts = opt.points();
            let n_d = opt.n_d();
            let s_ref = [0, 1].map(|k| (1.0 / (n_d * mean_max_rate(pts, k).max(1e-3))).ln());
            let g = cfg.coarse.max(2);
            let mut best = ([0.0; 2], f64::INFINITY);
            for i in 0..g {
                for j in 0..g {
                    let x = |t: usize| {
                        let (lo, hi) = cfg.decades;
                        (lo + (hi - lo) * t as f64 / (g - 1) as f64) * std::f64::consts::LN_10
                    };
                    let ls = [s_ref[0] + x(i), s_ref[1] + x(j)];
                    let v = search.eval(ls);
                    if v < best.1 {
                        best = (ls, v);
                    }
                }
            }
            best
        }
    };
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let start = cur.1;
        for axis in [1, 0] {
            let next = search.line(cur.0, axis, cfg);
            if next.1 < cur.1 {
                cur = next;
            }
        }
        if cur.1 == f64::INFINITY || !search.improved(start, cur.1, cfg.rel_tol) {
            break;
        }
    }
    let evaluations = search.cache.len();
    let Some((_, s, policy)) = search.best else {
        return Err(Error::Infeasible(format!(
            "no (s1, s2) meets user 1's target {} at alpha {} and w {}",
            user1.target, user1.alpha, user1.w
        )));
    };
    if search.cache.values().all(|v| *v == f64::INFINITY) {
        return Err(Error::Infeasible("user 2 is unstable for every feasible (s1, s2)".into()));
    }
    let bound_1 = delay_bound(&ArrivalSpec { alpha: user1.alpha }, &policy.service(0), user1.w)?;
    let (alpha_2, w_2) = match objective {
        Objective::MinBound { alpha, w } => (alpha, w),
        Objective::MaxArrival { w, target } => (max_arrival_exact(&policy.service(1), w, target).0, w),
    };
    let bound_2 = delay_bound(&ArrivalSpec { alpha: alpha_2 }, &policy.service(1), w_2)?;
    Ok(OuterResult { policy, s, bound_1, bound_2, alpha_2, iterations, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::SicKnapsack;
    use crate::csi::build_grid;

    fn knapsack() -> SicKnapsack {
        let pts = build_grid([200.0, 25.3], [0.0, 0.0], 20).unwrap().to_points();
        SicKnapsack { points: pts, n_d: 200.0 }
    }

    #[test]
    fn user_one_constraint_holds() {
        let opt = knapsack();
        let u1 = UserOne { alpha: 560.0, w: 5, target: 1e-6 };
        let res = outer_loop(&opt, u1, Objective::MinBound { alpha: 320.0, w: 5 }, &OuterConfig::default(), None)
            .unwrap();
        assert!(res.bound_1.bound <= 1e-6 * (1.0 + 1e-9), "{}", res.bound_1.bound);
        assert!(res.bound_2.bound < 1.0);
    }

    #[test]
    fn tighter_target_never_helps() {
        let opt = knapsack();
        let obj = Objective::MinBound { alpha: 320.0, w: 5 };
        let cfg = OuterConfig::default();
        let loose = outer_loop(&opt, UserOne { alpha: 560.0, w: 5, target: 1e-4 }, obj, &cfg, None).unwrap();
        let free = outer_loop(&opt, UserOne { alpha: 560.0, w: 5, target: 1.0 }, obj, &cfg, None).unwrap();
        let tight = outer_loop(&opt, UserOne { alpha: 560.0, w: 5, target: 1e-8 }, obj, &cfg, None).unwrap();
        assert!(free.bound_2.bound <= loose.bound_2.bound * 1.05);
        assert!(loose.bound_2.bound <= tight.bound_2.bound * 1.05);
    }

    #[test]
    fn impossible_user_one_is_infeasible() {
        let opt = knapsack();
        let u1 = UserOne { alpha: 1e5, w: 5, target: 1e-8 };
        let r = outer_loop(&opt, u1, Objective::MaxArrival { w: 5, target: 1e-8 }, &OuterConfig::default(), None);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }
}
