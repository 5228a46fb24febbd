//! Rate search over a finite candidate set for models without a closed form
//! (imperfect CSI, finite blocklength).
//!
//! Each grid point gets an `M x M` table of candidate rate pairs per decoding
//! mode, with error probabilities computed once. For fixed `(s1, s2, lambda)`
//! every point then independently minimizes
//!
//! ```text
//! eps2 + (1 - eps2) e^{-s2 n_d r2} + lambda (eps1 + (1 - eps1) e^{-s1 n_d r1})
//! ```
//!
//! and `lambda` is found by bisection so that user 1's Mellin transform meets
//! its budget.

use rayon::prelude::*;

use crate::channel::{r_max, r_min, DecodingOrder, RatePair};
use crate::csi::{EstimatedState, GridPoint};
use crate::errors::{sigma_fbl, Decoder, DispersionKind, ErrorModel, ErrorPair};
use crate::{Error, Result};

use super::{PolicyParams, PolicyPoint, RateOptimizer, RatePolicy};

const LAMBDA_MIN: f64 = 1e-8;
const LAMBDA_MAX: f64 = 1e8;
const LAMBDA_STEPS: usize = 64;
// Bisection stops once ln(lambda) is pinned to this width.
const LAMBDA_TOL: f64 = 1e-3;
// Guards the constraint against the single-precision error table.
const BUDGET_MARGIN: f64 = 1e-6;

/// Linear rate axes of one grid point in one decoding mode.
///
/// For SIC the axes are `(r1, r2)`; for joint decoding `(r1, r1 + r2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateWindows {
    pub lo: [f64; 2],
    pub step: [f64; 2],
}

impl RateWindows {
    fn new(lo: [f64; 2], hi: [f64; 2], m: usize) -> Self {
        let d = (m - 1) as f64;
        Self { lo, step: [(hi[0] - lo[0]).max(0.0) / d, (hi[1] - lo[1]).max(0.0) / d] }
    }

    pub fn value(&self, axis: usize, idx: usize) -> f64 {
        self.lo[axis] + self.step[axis] * idx as f64
    }

    pub fn hi(&self, axis: usize, m: usize) -> f64 {
        self.value(axis, m - 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    u1: f64,
    u2: f64,
    mode: usize,
    cand: usize,
}

/// Lower-left convex hull of `(u1, u2)`: vertices by increasing `u1` and
/// decreasing `u2`, ending at the smallest `u2`.
fn lower_hull(c: &mut [Cand]) -> Vec<Cand> {
    c.sort_by(|a, b| a.u1.total_cmp(&b.u1).then(a.u2.total_cmp(&b.u2)));
    let mut h: Vec<Cand> = Vec::with_capacity(c.len().min(64));
    for &p in c.iter() {
        if h.last().is_some_and(|q| p.u2 >= q.u2) {
            continue;
        }
        while h.len() >= 2 {
            let (a, b) = (h[h.len() - 2], h[h.len() - 1]);
            // Drop `b` unless it lies strictly below the chord from `a` to `p`.
            if (b.u1 - a.u1) * (p.u2 - a.u2) - (b.u2 - a.u2) * (p.u1 - a.u1) <= 0.0 {
                h.pop();
            } else {
                break;
            }
        }
        h.push(p);
    }
    h
}

/// Rate-candidate search for one error model over a set of grid points.
#[derive(Debug, Clone)]
pub struct GridSearch {
    model: ErrorModel,
    points: Vec<GridPoint>,
    n_d: f64,
    m: usize,
    modes: Vec<DecodingOrder>,
    windows: Vec<RateWindows>,
    eps: Vec<[f32; 2]>,
}

fn candidate_rates(mode: DecodingOrder, w: &RateWindows, a: usize, b: usize) -> Option<RatePair> {
    let x0 = w.value(0, a);
    let x1 = w.value(1, b);
    match mode {
        DecodingOrder::Joint => {
            let r2 = x1 - x0;
            (r2 >= 0.0).then_some(RatePair { r_1: x0, r_2: r2, order: mode })
        }
        _ => Some(RatePair { r_1: x0, r_2: x1, order: mode }),
    }
}

impl GridSearch {
    /// Builds the candidate table. `n_d` is the data blocklength entering
    /// the service process; `rate_candidates` is `M` per axis.
    pub fn new(model: ErrorModel, points: Vec<GridPoint>, n_d: f64, rate_candidates: usize) -> Result<Self> {
        let m = rate_candidates;
        if m < 2 {
            return Err(Error::invalid(format!("need at least 2 rate candidates per axis, got {m}")));
        }
        let modes = match model.decoder {
            Decoder::Sic => vec![DecodingOrder::User1First, DecodingOrder::User2First],
            Decoder::Joint => vec![DecodingOrder::Joint],
            Decoder::OmaSingleUser => {
                return Err(Error::invalid("orthogonal access is optimized per user, not on the joint grid"))
            }
        };
        let windows: Vec<RateWindows> = points
            .iter()
            .flat_map(|p| modes.iter().map(move |&mode| (p, mode)))
            .map(|(p, mode)| Self::windows_for(&model, p, mode, m))
            .collect();
        let per = m * m;
        let eps: Vec<[f32; 2]> = (0..windows.len())
            .into_par_iter()
            .flat_map_iter(|wi| {
                let p = points[wi / modes.len()];
                let mode = modes[wi % modes.len()];
                let w = windows[wi];
                let state = p.state();
                (0..per).map(move |c| match candidate_rates(mode, &w, c / m, c % m) {
                    Some(r) => {
                        let e = model.eps(&r, &state).unwrap_or(ErrorPair::both(1.0));
                        [e.eps_1 as f32, e.eps_2 as f32]
                    }
                    None => [1.0, 1.0],
                })
            })
            .collect();
        Ok(Self { model, points, n_d, m, modes, windows, eps })
    }

    fn windows_for(model: &ErrorModel, p: &GridPoint, mode: DecodingOrder, m: usize) -> RateWindows {
        let spread = |k: usize| -> f64 {
            let s = p.sigma_ic[k];
            match model.coding.n_d() {
                Some(n) => s.hypot(sigma_fbl(p.rho_hat[k], n, DispersionKind::Iid)),
                None => s,
            }
        };
        let sig = [spread(0), spread(1)];
        let g = p.rho_hat;
        let low = |k: usize| (g[k] - 8.0 * sig[k]).max(0.0);
        let high = |k: usize| g[k] + 3.0 * sig[k];
        let last = |k: usize| (r_max(low(k)), r_max(high(k)));
        let first = |k: usize| {
            let o = 1 - k;
            (r_min(low(k), g[o] + 8.0 * sig[o]), r_min(high(k), (g[o] - 3.0 * sig[o]).max(0.0)))
        };
        match mode {
            DecodingOrder::User1First => {
                let (a, b) = (first(0), last(1));
                RateWindows::new([a.0, b.0], [a.1, b.1], m)
            }
            DecodingOrder::User2First => {
                let (a, b) = (last(0), first(1));
                RateWindows::new([a.0, b.0], [a.1, b.1], m)
            }
            DecodingOrder::Joint => {
                let s = sig[0].hypot(sig[1]);
                let sum = g[0] + g[1];
                let lo = [first(0).0, r_max((sum - 8.0 * s).max(0.0))];
                let hi = [last(0).1, r_max(sum + 3.0 * s)];
                RateWindows::new(lo, hi, m)
            }
        }
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    pub fn rate_candidates(&self) -> usize {
        self.m
    }

    /// Per point, the lower convex hull of the candidates' `(u1, u2)`, where
    /// `u_k` is the user's Mellin contribution without the point mass.
    ///
    /// Under SIC the error of the user decoded first does not depend on the
    /// other rate, so only the best candidate of each row (user 1 first) or
    /// column (user 2 first) can be optimal. Under joint decoding `u1` grows
    /// along each row, so a row contributes its running minima of `u2`.
    fn hulls(&self, s: [f64; 2]) -> Vec<Vec<Cand>> {
        let m = self.m;
        let nm = self.modes.len();
        let (x1, x2) = (s[0] * self.n_d, s[1] * self.n_d);
        (0..self.points.len())
            .into_par_iter()
            .map_init(
                || (vec![0.0; m], vec![0.0; m], vec![0.0; m], Vec::with_capacity(4 * m)),
                |(e1, e2, e2b, cands), i| {
                    cands.clear();
                    for k in 0..nm {
                        let wi = i * nm + k;
                        let w = &self.windows[wi];
                        let mode = self.modes[k];
                        let joint = mode == DecodingOrder::Joint;
                        for a in 0..m {
                            e1[a] = (-x1 * w.value(0, a)).exp();
                        }
                        let factored = joint && x2 * (w.hi(0, m) - w.lo[1]) < 600.0;
                        if factored {
                            // e^{-x2 (sum - r1)} = e^{-x2 (sum - lo_sum)} e^{-x2 (lo_sum - r1)}
                            let lo_sum = w.lo[1];
                            for a in 0..m {
                                e2b[a] = (-x2 * (lo_sum - w.value(0, a))).exp();
                            }
                            for b in 0..m {
                                e2[b] = (-x2 * (w.value(1, b) - lo_sum)).exp();
                            }
                        } else if !joint {
                            for b in 0..m {
                                e2[b] = (-x2 * w.value(1, b)).exp();
                            }
                        }
                        let table = &self.eps[wi * m * m..(wi + 1) * m * m];
                        let u = |a: usize, b: usize| -> (f64, f64) {
                            let [ea, eb] = table[a * m + b];
                            let (ea, eb) = (ea as f64, eb as f64);
                            let f2 = if joint {
                                let r2 = w.value(1, b) - w.value(0, a);
                                if r2 < 0.0 {
                                    1.0
                                } else if factored {
                                    e2[b] * e2b[a]
                                } else {
                                    (-x2 * r2).exp()
                                }
                            } else {
                                e2[b]
                            };
                            (ea + (1.0 - ea) * e1[a], eb + (1.0 - eb) * f2)
                        };
                        let mut push = |a: usize, b: usize, v: (f64, f64)| {
                            cands.push(Cand { u1: v.0, u2: v.1, mode: k, cand: a * m + b })
                        };
                        match mode {
                            DecodingOrder::User1First => {
                                for a in 0..m {
                                    let (b, v) = (0..m)
                                        .map(|b| (b, u(a, b)))
                                        .fold((0, (f64::INFINITY, f64::INFINITY)), |x, y| if y.1 .1 < x.1 .1 { y } else { x });
                                    push(a, b, v);
                                }
                            }
                            DecodingOrder::User2First => {
                                for b in 0..m {
                                    let (a, v) = (0..m)
                                        .map(|a| (a, u(a, b)))
                                        .fold((0, (f64::INFINITY, f64::INFINITY)), |x, y| if y.1 .0 < x.1 .0 { y } else { x });
                                    push(a, b, v);
                                }
                            }
                            DecodingOrder::Joint => {
                                for a in 0..m {
                                    let mut best = f64::INFINITY;
                                    for b in 0..m {
                                        let v = u(a, b);
                                        if v.1 < best {
                                            best = v.1;
                                            push(a, b, v);
                                        }
                                    }
                                }
                            }
                        }
                    }
                    lower_hull(cands)
                },
            )
            .collect()
    }

    /// Per point, the hull vertex minimizing `u2 + lambda u1`.
    fn pick(&self, hulls: &[Vec<Cand>], lambda: f64) -> Vec<Cand> {
        hulls
            .iter()
            .map(|h| {
                // Moving from vertex i to i + 1 pays off while the slope beats
                // lambda; slopes decrease along the hull.
                let better = |i: usize| h[i].u2 - h[i + 1].u2 > lambda * (h[i + 1].u1 - h[i].u1);
                let (mut lo, mut hi) = (0, h.len() - 1);
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if better(mid) {
                        lo = mid + 1;
                    } else {
                        hi = mid;
                    }
                }
                h[lo]
            })
            .collect()
    }

    fn log_mellin_1(&self, sel: &[Cand]) -> f64 {
        sel.iter().zip(&self.points).map(|(c, p)| p.prob * c.u1).sum::<f64>().ln()
    }

    fn build_policy(&self, s: [f64; 2], lambda: f64, sel: &[Cand]) -> RatePolicy {
        let m = self.m;
        let nm = self.modes.len();
        let points = sel
            .iter()
            .zip(&self.points)
            .enumerate()
            .map(|(i, (&Cand { mode: k, cand: c, .. }, p))| {
                let mode = self.modes[k];
                let w = &self.windows[i * nm + k];
                let (rates, eps) = match candidate_rates(mode, w, c / m, c % m) {
                    Some(r) => {
                        let e = self.model.eps(&r, &p.state()).unwrap_or(ErrorPair::both(1.0));
                        (r, e)
                    }
                    None => (RatePair { r_1: 0.0, r_2: 0.0, order: mode }, ErrorPair::both(1.0)),
                };
                PolicyPoint { prob: p.prob, rho_hat: p.rho_hat, rates, eps }
            })
            .collect();
        RatePolicy { n_d: self.n_d, points, params: PolicyParams { s, lambda } }
    }

    /// The per-point minimizers for fixed `(s1, s2, lambda)`.
    pub fn policy_at(&self, s: [f64; 2], lambda: f64) -> RatePolicy {
        let sel = self.pick(&self.hulls(s), lambda);
        self.build_policy(s, lambda, &sel)
    }

    /// The objective `sum_i p_i (u2 + lambda u1)` of [`Self::policy_at`],
    /// using the tabulated error probabilities.
    pub fn objective_at(&self, s: [f64; 2], lambda: f64) -> f64 {
        self.pick(&self.hulls(s), lambda)
            .iter()
            .zip(&self.points)
            .map(|(c, p)| p.prob * (c.u2 + lambda * c.u1))
            .sum()
    }

    /// Error probabilities of a point in a given candidate, recomputed in
    /// double precision.
    pub fn state(&self, i: usize) -> EstimatedState {
        self.points[i].state()
    }
}

impl RateOptimizer for GridSearch {
    fn n_d(&self) -> f64 {
        self.n_d
    }

    fn points(&self) -> &[GridPoint] {
        &self.points
    }

    fn constrained(&self, s: [f64; 2], log_budget: f64) -> Result<RatePolicy> {
        let target = log_budget - BUDGET_MARGIN;
        let (mut lo, mut hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
        let hulls = self.hulls(s);
        let free = self.pick(&hulls, lo.exp());
        if self.log_mellin_1(&free) <= target {
            return Ok(self.build_policy(s, lo.exp(), &free));
        }
        let mut best = self.pick(&hulls, hi.exp());
        let top = self.log_mellin_1(&best);
        if top > target {
            return Err(Error::Infeasible(format!(
                "user 1 needs ln M_S <= {log_budget}, best candidate policy gives {top}"
            )));
        }
        for _ in 0..LAMBDA_STEPS {
            if hi - lo < LAMBDA_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let sel = self.pick(&hulls, mid.exp());
            if self.log_mellin_1(&sel) <= target {
                hi = mid;
                best = sel;
            } else {
                lo = mid;
            }
        }
        Ok(self.build_policy(s, hi.exp(), &best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{joint_closed_form, SicKnapsack};
    use crate::csi::build_grid;
    use crate::errors::{Coding, CsiModel};

    fn model(csi: CsiModel, coding: Coding, decoder: Decoder) -> ErrorModel {
        ErrorModel::new(csi, coding, decoder).unwrap()
    }

    fn icsi_point() -> GridPoint {
        let s2 = [1.0 / 25001.0, 1.0 / 791.6];
        let st = EstimatedState::from_estimates([100.0, 5.0], [200.0, 25.3], s2).unwrap();
        GridPoint { rho_hat: st.rho_hat, sigma_ic: st.sigma_ic, prob: 1.0 }
    }

    fn brute_force(g: &GridSearch, s: [f64; 2], lambda: f64) -> f64 {
        let m = g.m;
        let nm = g.modes.len();
        let mut total = 0.0;
        for (i, p) in g.points.iter().enumerate() {
            let mut best = f64::INFINITY;
            for k in 0..nm {
                let w = &g.windows[i * nm + k];
                for c in 0..m * m {
                    let [e1, e2] = g.eps[(i * nm + k) * m * m + c].map(f64::from);
                    let Some(r) = candidate_rates(g.modes[k], w, c / m, c % m) else { continue };
                    let u1 = e1 + (1.0 - e1) * (-s[0] * g.n_d * r.r_1).exp();
                    let u2 = e2 + (1.0 - e2) * (-s[1] * g.n_d * r.r_2).exp();
                    best = best.min(u2 + lambda * u1);
                }
            }
            total += p.prob * best;
        }
        total
    }

    #[test]
    fn hull_pick_matches_exhaustive_search() {
        let pts = build_grid([200.0, 25.3], [1.0 / 25001.0, 1.0 / 791.6], 6).unwrap().to_points();
        for (coding, decoder) in [
            (Coding::InfiniteBlocklength, Decoder::Sic),
            (Coding::FiniteBlocklength { n_d: 200.0 }, Decoder::Sic),
            (Coding::InfiniteBlocklength, Decoder::Joint),
            (Coding::FiniteBlocklength { n_d: 200.0 }, Decoder::Joint),
        ] {
            let g = GridSearch::new(model(CsiModel::Imperfect, coding, decoder), pts.clone(), 200.0, 12).unwrap();
            for (s, lambda) in [([0.004, 0.004], 0.0), ([0.002, 0.01], 0.3), ([0.01, 0.003], 7.0), ([0.005, 0.005], 1e4)] {
                let a = g.objective_at(s, lambda);
                let b = brute_force(&g, s, lambda);
                assert!((a - b).abs() <= 1e-12 * b.abs(), "{decoder:?} {s:?} {lambda}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn lambda_zero_serves_user_two() {
        let m = model(CsiModel::Imperfect, Coding::InfiniteBlocklength, Decoder::Sic);
        let g = GridSearch::new(m, vec![icsi_point()], 200.0, 16).unwrap();
        let s = [0.005, 0.005];
        let p0 = g.policy_at(s, 0.0);
        let p1 = g.policy_at(s, 1e3);
        assert!(p0.log_mellin(1, s[1]) <= p1.log_mellin(1, s[1]));
        assert!(p0.log_mellin(0, s[0]) >= p1.log_mellin(0, s[0]));
    }

    #[test]
    fn refinement_self_consistency() {
        let m = model(CsiModel::Imperfect, Coding::InfiniteBlocklength, Decoder::Sic);
        let s = [0.004, 0.006];
        for lambda in [0.1, 1.0, 10.0] {
            let coarse = GridSearch::new(m, vec![icsi_point()], 200.0, 16).unwrap().objective_at(s, lambda);
            let fine = GridSearch::new(m, vec![icsi_point()], 200.0, 256).unwrap().objective_at(s, lambda);
            assert!(fine <= coarse * (1.0 + 1e-9));
            assert!(coarse <= fine * 1.02, "lambda {lambda}: {coarse} vs {fine}");
        }
    }

    #[test]
    fn nested_grids_never_worse() {
        let pts = build_grid([100.0, 20.0], [1e-3, 2e-3], 5).unwrap().to_points();
        let m = model(CsiModel::Imperfect, Coding::FiniteBlocklength { n_d: 200.0 }, Decoder::Joint);
        let s = [0.003, 0.004];
        let mut last = f64::INFINITY;
        for k in [3, 5, 9, 17, 33] {
            let obj = GridSearch::new(m, pts.clone(), 200.0, k).unwrap().objective_at(s, 2.0);
            assert!(obj <= last * (1.0 + 1e-9), "M={k}: {obj} > {last}");
            last = obj;
        }
    }

    #[test]
    fn perfect_csi_sic_matches_knapsack() {
        let pts = build_grid([200.0, 25.3], [0.0, 0.0], 12).unwrap().to_points();
        let m = model(CsiModel::Perfect, Coding::InfiniteBlocklength, Decoder::Sic);
        let g = GridSearch::new(m, pts.clone(), 200.0, 2).unwrap();
        let ks = SicKnapsack { points: pts, n_d: 200.0 };
        let s = [0.003, 0.004];
        let a = ks.unconstrained(s).unwrap();
        let b = g.policy_at(s, 0.0);
        assert!((a.log_mellin(1, s[1]) - b.log_mellin(1, s[1])).abs() < 1e-9);
        assert!(b.points.iter().all(|p| p.eps.eps_1 == 0.0 && p.eps.eps_2 == 0.0));
    }

    #[test]
    fn perfect_csi_joint_approaches_closed_form() {
        let pts = build_grid([200.0, 25.3], [0.0, 0.0], 8).unwrap().to_points();
        let m = model(CsiModel::Perfect, Coding::InfiniteBlocklength, Decoder::Joint);
        let s = [0.003, 0.004];
        let lambda: f64 = 3.0;
        let lt = (lambda * s[0] / s[1]).ln() / ((s[0] + s[1]) * 200.0);
        let exact = joint_closed_form(&pts, s[0], s[1], 200.0, lt);
        let obj = |p: &RatePolicy| p.log_mellin(1, s[1]).exp() + lambda * p.log_mellin(0, s[0]).exp();
        let want = obj(&exact);
        let mut gap = f64::INFINITY;
        for k in [9, 33, 129] {
            let g = GridSearch::new(m, pts.clone(), 200.0, k).unwrap();
            let got = obj(&g.policy_at(s, lambda));
            assert!(got >= want * (1.0 - 1e-9));
            let d = got / want - 1.0;
            assert!(d <= gap + 1e-12);
            gap = d;
        }
        assert!(gap < 1e-3, "{gap}");
    }

    #[test]
    fn constrained_meets_budget_with_fresh_errors() {
        let pts = build_grid([200.0, 25.3], [1.0 / 25001.0, 1.0 / 791.6], 6).unwrap().to_points();
        let m = model(CsiModel::Imperfect, Coding::InfiniteBlocklength, Decoder::Sic);
        let g = GridSearch::new(m, pts, 200.0, 12).unwrap();
        let s = [0.004, 0.004];
        let free = g.policy_at(s, 1e-8).log_mellin(0, s[0]);
        let strict = g.policy_at(s, 1e8).log_mellin(0, s[0]);
        let budget = 0.5 * (free + strict);
        let pol = g.constrained(s, budget).unwrap();
        assert!(pol.log_mellin(0, s[0]) <= budget);
        for (i, p) in pol.points.iter().enumerate() {
            let e = m.eps(&p.rates, &g.state(i)).unwrap();
            assert_eq!(e, p.eps);
        }
        assert!(g.constrained(s, strict - 1.0).is_err());
    }
}
