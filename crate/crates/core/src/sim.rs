//! Slot-level Monte Carlo simulation of the two user queues.
//!
//! Every slot a channel state is drawn, each user is offered `n_d * r` bits
//! (nothing if its codeword is lost) which drain its FIFO backlog, and then
//! `alpha` new bits arrive as one batch. The delay `d` of a batch is the
//! number of slots until its last bit leaves, so every delay is at least one
//! slot. A batch arriving after the service of slot `t` is first served in
//! slot `t + 1`, which is the slot it counts as arriving in for the virtual
//! delay `W = d - 1`; violation probabilities are those of `W`.
//!
//! All batches of a user have the same size, so the queue is kept as a batch
//! count plus the remainder of the head batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{OmaUser, RatePolicy};
use crate::channel::RatePair;
use crate::csi::{sample_conditional, sample_exact, SnrGrid};
use crate::errors::{decode_outcome, stream_seed, ErrorModel};
use crate::snc::DelayBound;
use crate::stats::Proportion;
use crate::{Error, Result};

/// How decoding failures are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Grid cell drawn uniformly, the true SNR drawn from its exact law
    /// given the cell's estimate, decoding decided against the true SNR.
    Exact,
    /// Estimate drawn from its continuous law and mapped to the grid cell
    /// containing it; the true SNR follows from the same channel draw.
    Continuous,
    /// Grid cell drawn uniformly, each user fails independently with the
    /// policy's analytic error probability.
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Bits arriving per slot per user.
    pub alpha: [f64; 2],
    /// Recorded slots over all replications.
    pub slots: u64,
    /// Slots discarded at the start of each replication.
    pub burn_in: u64,
    pub replications: u32,
    /// Largest deadline reported.
    pub w_max: u32,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(alpha: [f64; 2], slots: u64, w_max: u32, seed: u64) -> Self {
        Self { alpha, slots, burn_in: 1000, replications: 64, w_max, seed }
    }
}

/// Offered service per slot.
pub trait SlotService: Sync {
    /// Bits offered to each user in one slot.
    fn draw(&self, fidelity: Fidelity, rng: &mut ChaCha8Rng) -> [f64; 2];
}

/// Two users sharing the channel under a NOMA policy indexed by `grid`.
#[derive(Debug, Clone, Copy)]
pub struct NomaService<'a> {
    pub model: ErrorModel,
    pub policy: &'a RatePolicy,
    pub grid: &'a SnrGrid,
}

impl<'a> NomaService<'a> {
    pub fn new(model: ErrorModel, policy: &'a RatePolicy, grid: &'a SnrGrid) -> Result<Self> {
        if policy.points.len() != grid.len() {
            return Err(Error::invalid(format!(
                "policy has {} points but the grid has {}",
                policy.points.len(),
                grid.len()
            )));
        }
        Ok(Self { model, policy, grid })
    }
}

impl SlotService for NomaService<'_> {
    fn draw(&self, fidelity: Fidelity, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let rho_bar = self.grid.rho_bar();
        let s2 = self.grid.sigma_z2();
        let (i, gamma) = match fidelity {
            Fidelity::Continuous => {
                let d = [0, 1].map(|k| sample_exact(rho_bar[k], s2[k], rng));
                (self.grid.cell_of([d[0].0, d[1].0]), [d[0].1, d[1].1])
            }
            _ => {
                let i = rng.random_range(0..self.grid.len());
                let p = &self.policy.points[i];
                let g = if fidelity == Fidelity::Exact {
                    [0, 1].map(|k| sample_conditional(rho_bar[k], s2[k], p.rho_hat[k], rng))
                } else {
                    [0.0; 2]
                };
                (i, g)
            }
        };
        let p = &self.policy.points[i];
        let ok = match fidelity {
            Fidelity::Approximate => [0, 1].map(|k| !bernoulli(p.eps.get(k), rng)),
            _ => decode_outcome(&self.model, &p.rates, gamma, rng),
        };
        let r = p.rates.as_array();
        [0, 1].map(|k| if ok[k] { self.policy.n_d * r[k] } else { 0.0 })
    }
}

/// Two users on orthogonal resources, each with its own policy per
/// marginal grid cell.
#[derive(Debug, Clone)]
pub struct OmaService<'a> {
    pub users: &'a [OmaUser; 2],
    /// Per user and cell: `(rate, eps)`.
    pub policy: [Vec<(f64, f64)>; 2],
}

impl<'a> OmaService<'a> {
    /// Uses each user's policy at its own Mellin parameter `s[k]`.
    pub fn new(users: &'a [OmaUser; 2], s: [f64; 2]) -> Self {
        Self { users, policy: [users[0].policy(s[0]), users[1].policy(s[1])] }
    }
}

impl SlotService for OmaService<'_> {
    fn draw(&self, fidelity: Fidelity, rng: &mut ChaCha8Rng) -> [f64; 2] {
        [0, 1].map(|k| {
            let u = &self.users[k];
            let g = &u.grid;
            let (j, gamma) = match fidelity {
                Fidelity::Continuous => {
                    let (h, t) = sample_exact(g.rho_bar, g.sigma_z2, rng);
                    (g.cell_of(h), t)
                }
                Fidelity::Exact => {
                    let j = rng.random_range(0..g.len());
                    (j, sample_conditional(g.rho_bar, g.sigma_z2, g.points[j], rng))
                }
                Fidelity::Approximate => (rng.random_range(0..g.len()), 0.0),
            };
            let (rate, eps) = self.policy[k][j];
            let ok = match fidelity {
                Fidelity::Approximate => !bernoulli(eps, rng),
                _ => {
                    let rates = RatePair { r_1: rate, r_2: rate, order: crate::channel::DecodingOrder::Joint };
                    decode_outcome(&u.model, &rates, [gamma, gamma], rng)[0]
                }
            };
            if ok {
                u.n_d * rate
            } else {
                0.0
            }
        })
    }
}

fn bernoulli(p: f64, rng: &mut ChaCha8Rng) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        Bernoulli::new(p).map(|b| b.sample(rng)).unwrap_or(false)
    }
}

/// FIFO of equal batches.
#[derive(Debug, Clone, Copy)]
struct Queue {
    alpha: f64,
    /// Batches in the buffer.
    count: u64,
    /// Unserved bits of the head batch.
    head: f64,
    /// Arrival slot of the newest batch.
    last: u64,
}

impl Queue {
    fn new(alpha: f64) -> Self {
        Self { alpha, count: 0, head: alpha, last: 0 }
    }

    /// Serves up to `bits` in slot `t`, reporting the delay of every batch
    /// that completes.
    fn serve(&mut self, mut bits: f64, t: u64, mut done: impl FnMut(u64, u64)) {
        let slack = 1e-9 * self.alpha;
        while self.count > 0 && bits > 0.0 {
            if bits + slack >= self.head {
                bits -= self.head;
                let arrived = self.last + 1 - self.count;
                done(arrived, t - arrived);
                self.count -= 1;
                self.head = self.alpha;
            } else {
                self.head -= bits;
                bits = 0.0;
            }
        }
    }

    fn arrive(&mut self, t: u64) {
        if self.count == 0 {
            self.head = self.alpha;
        }
        self.count += 1;
        self.last = t;
    }

    fn backlog(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.head + (self.count - 1) as f64 * self.alpha
        }
    }
}

/// Delay histogram of one user: `hist[d]` counts batches with delay `d` for
/// `d <= w_max + 1`, the last entry those with larger delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub alpha: f64,
    pub hist: Vec<u64>,
    pub batches: u64,
    /// `p_v(w) = P(W > w) = P(d > w + 1)` for `w = 1..=w_max`.
    pub pv: Vec<Proportion>,
    /// Largest end-of-run backlog over replications, in bits.
    pub final_backlog: f64,
    pub saturated: bool,
}

impl UserReport {
    pub fn pv_at(&self, w: u32) -> Option<&Proportion> {
        self.pv.get((w as usize).checked_sub(1)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub fidelity: Fidelity,
    pub config: SimConfig,
    pub users: [UserReport; 2],
}

fn buckets(w_max: u32) -> usize {
    w_max as usize + 3
}

struct Replication {
    hist: [Vec<u64>; 2],
    backlog: [f64; 2],
}

fn replicate(service: &dyn SlotService, fidelity: Fidelity, cfg: &SimConfig, slots: u64, seed: u64) -> Replication {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buckets = buckets(cfg.w_max);
    let mut hist = [vec![0u64; buckets], vec![0u64; buckets]];
    let mut queues = cfg.alpha.map(Queue::new);
    let first = cfg.burn_in;
    let end = cfg.burn_in + slots;
    let record = |hist: &mut Vec<u64>, arrived: u64, delay: u64| {
        if arrived >= first && arrived < end {
            hist[(delay as usize).min(buckets - 1)] += 1;
        }
    };
    for t in 0..end {
        let offer = service.draw(fidelity, &mut rng);
        for k in 0..2 {
            if cfg.alpha[k] > 0.0 {
                let h = &mut hist[k];
                queues[k].serve(offer[k], t, |a, d| record(h, a, d));
                queues[k].arrive(t);
            }
        }
    }
    let backlog = [queues[0].backlog(), queues[1].backlog()];
    // Drain without new arrivals until every recorded batch has either left
    // or is known to exceed w_max + 1.
    for t in end..end + cfg.w_max as u64 + 2 {
        let offer = service.draw(fidelity, &mut rng);
        for k in 0..2 {
            let h = &mut hist[k];
            queues[k].serve(offer[k], t, |a, d| record(h, a, d));
        }
    }
    for k in 0..2 {
        let q = &queues[k];
        let recorded = q.count.min((q.last + 1).saturating_sub(first));
        hist[k][buckets - 1] += if cfg.alpha[k] > 0.0 { recorded } else { 0 };
    }
    Replication { hist, backlog }
}

/// Runs the queues for `cfg.slots` recorded slots split into independent
/// replications. The result depends only on the seed, not on the thread
/// count.
pub fn simulate(service: &dyn SlotService, fidelity: Fidelity, cfg: &SimConfig) -> Result<SimReport> {
    if cfg.slots == 0 || cfg.replications == 0 {
        return Err(Error::invalid("simulation needs at least one slot and one replication"));
    }
    if cfg.alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::invalid(format!("invalid arrival rates {:?}", cfg.alpha)));
    }
    let reps = cfg.replications as u64;
    let runs: Vec<Replication> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let slots = cfg.slots / reps + u64::from(r < cfg.slots % reps);
            replicate(service, fidelity, cfg, slots, stream_seed(cfg.seed, r))
        })
        .collect();
    let buckets = buckets(cfg.w_max);
    let users = [0, 1].map(|k| {
        let mut hist = vec![0u64; buckets];
        let mut final_backlog: f64 = 0.0;
        for run in &runs {
            for (h, c) in hist.iter_mut().zip(&run.hist[k]) {
                *h += c;
            }
            final_backlog = final_backlog.max(run.backlog[k]);
        }
        let batches: u64 = hist.iter().sum();
        let pv = (1..=cfg.w_max as usize)
            .map(|w| Proportion::new(hist[w + 2..].iter().sum(), batches))
            .collect();
        let per_rep = (cfg.slots / reps).max(1) as f64;
        let limit = (per_rep / 100.0).max(10.0 * (cfg.w_max as f64 + 1.0));
        let saturated = cfg.alpha[k] > 0.0 && final_backlog > cfg.alpha[k] * limit;
        if saturated {
            log::warn!(
                "user {}: backlog of {final_backlog:.0} bits at the end of a replication, the queue looks unstable",
                k + 1
            );
        }
        UserReport { alpha: cfg.alpha[k], hist, batches, pv, final_backlog, saturated }
    });
    Ok(SimReport { fidelity, config: *cfg, users })
}

/// Outcome of comparing one empirical point with its bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Upper confidence limit at or below the bound.
    Pass,
    /// Point estimate at or below the bound but the interval reaches above
    /// it (typically no or very few violations observed).
    Unobservable,
    /// Point estimate above the bound.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub w: u32,
    pub bound: f64,
    pub pv: Proportion,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Slopes of `ln p` against `w` over the observed range, empirical then
    /// analytic; `None` with fewer than two observed points.
    pub slopes: Option<(f64, f64)>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.verdict != Verdict::Fail)
    }
}

fn slope(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Compares one user's empirical violation frequencies with its bounds.
pub fn compare(report: &UserReport, bounds: &[DelayBound]) -> Comparison {
    let rows: Vec<ComparisonRow> = bounds
        .iter()
        .filter_map(|b| {
            let pv = *report.pv_at(b.w)?;
            let verdict = if pv.hi <= b.bound {
                Verdict::Pass
            } else if pv.estimate <= b.bound {
                Verdict::Unobservable
            } else {
                Verdict::Fail
            };
            Some(ComparisonRow { w: b.w, bound: b.bound, pv, verdict })
        })
        .collect();
    let observed: Vec<&ComparisonRow> = rows.iter().filter(|r| r.pv.count > 0 && r.bound > 0.0).collect();
    let slopes = (observed.len() >= 2).then(|| {
        let e: Vec<_> = observed.iter().map(|r| (r.w as f64, r.pv.estimate.ln())).collect();
        let a: Vec<_> = observed.iter().map(|r| (r.w as f64, r.bound.ln())).collect();
        (slope(&e), slope(&a))
    });
    Comparison { rows, slopes }
}
