//! Scheme-level drivers: delay bounds with optimized rates, arrival-rate
//! sweeps, error-probability validation and bound-versus-simulation runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::{
    oma_policy, outer_loop, GridSearch, JointClosedForm, Objective, OmaUser, OuterConfig, RateOptimizer, RatePolicy,
    SicKnapsack, UserOne,
};
use crate::channel::{r_max, r_min, r_sum, AvgSnrConfig, DecodingOrder, RatePair, SnrPair};
use crate::csi::{build_grid, sample_exact, EstimatedState, MarginalGrid, SnrGrid, TrainingConfig};
use crate::errors::{oracle_eps, stream_seed, Coding, CsiModel, Decoder, ErrorModel, ExactChannel, OracleEstimate};
use crate::sim::{compare, simulate, Comparison, Fidelity, NomaService, OmaService, SimConfig, SimReport, SlotService};
use crate::snc::{delay_bound, ArrivalSpec, DelayBound};
use crate::{linear_to_db, Error, Result};

/// Channel knowledge and coding assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    Pcsi,
    Icsi,
    IcsiFbl,
}

impl ChannelModel {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelModel::Pcsi => "pcsi",
            ChannelModel::Icsi => "icsi",
            ChannelModel::IcsiFbl => "icsi_fbl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Sic,
    Joint,
    Oma,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Sic => "noma-sic",
            Scheme::Joint => "noma-joint",
            Scheme::Oma => "oma",
        }
    }
}

/// Physical setup of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub snr: AvgSnrConfig,
    pub training: TrainingConfig,
    /// Symbols per slot, training included.
    pub n_total: u32,
    /// Bits arriving per slot.
    pub alpha: [f64; 2],
    /// Deadlines in slots.
    pub w: [u32; 2],
    /// Target delay-violation probability.
    pub target: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_total <= self.training.total_symbols() {
            return Err(Error::invalid(format!(
                "n_total = {} leaves no data symbols after {} training symbols",
                self.n_total,
                self.training.total_symbols()
            )));
        }
        if !(self.target > 0.0 && self.target <= 1.0) {
            return Err(Error::invalid(format!("target must lie in (0,1], got {}", self.target)));
        }
        if self.w.contains(&0) {
            return Err(Error::invalid("deadlines must be at least one slot"));
        }
        for a in self.alpha {
            ArrivalSpec::new(a)?;
        }
        Ok(())
    }

    /// Data symbols per slot.
    pub fn n_d(&self) -> f64 {
        (self.n_total - self.training.total_symbols()) as f64
    }

    /// Estimation error variances; zero under perfect CSI.
    pub fn sigma_z2(&self, model: ChannelModel) -> [f64; 2] {
        match model {
            ChannelModel::Pcsi => [0.0, 0.0],
            _ => self.training.sigma_z2(),
        }
    }

    pub fn error_model(&self, model: ChannelModel, scheme: Scheme) -> Result<ErrorModel> {
        let csi = match model {
            ChannelModel::Pcsi => CsiModel::Perfect,
            _ => CsiModel::Imperfect,
        };
        let coding = match model {
            ChannelModel::IcsiFbl => Coding::FiniteBlocklength { n_d: self.n_d() },
            _ => Coding::InfiniteBlocklength,
        };
        let decoder = match scheme {
            Scheme::Sic => Decoder::Sic,
            Scheme::Joint => Decoder::Joint,
            Scheme::Oma => Decoder::OmaSingleUser,
        };
        ErrorModel::new(csi, coding, decoder)
    }
}

/// Discretization and search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerics {
    /// Grid points per SNR axis.
    pub grid_points: usize,
    /// Rate candidates per axis for the grid search.
    pub rate_candidates: usize,
    /// Fraction of data symbols given to user 1 under OMA; `None` picks the
    /// best of a fixed set of splits.
    pub oma_split: Option<f64>,
    pub outer: OuterConfig,
}

impl Default for Numerics {
    fn default() -> Self {
        Self { grid_points: 100, rate_candidates: 32, oma_split: Some(0.5), outer: OuterConfig::default() }
    }
}

const OMA_SPLITS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// A NOMA scheme ready to optimize.
pub struct NomaSetup {
    pub model: ErrorModel,
    pub grid: SnrGrid,
    pub optimizer: Box<dyn RateOptimizer + Send>,
}

pub fn noma_setup(sc: &Scenario, model: ChannelModel, scheme: Scheme, num: &Numerics) -> Result<NomaSetup> {
    sc.validate()?;
    let em = sc.error_model(model, scheme)?;
    let grid = build_grid(sc.snr.rho_bar_pair(), sc.sigma_z2(model), num.grid_points)?;
    let points = grid.to_points();
    let n_d = sc.n_d();
    let optimizer: Box<dyn RateOptimizer + Send> = match (model, scheme) {
        (ChannelModel::Pcsi, Scheme::Sic) => Box::new(SicKnapsack { points, n_d }),
        (ChannelModel::Pcsi, Scheme::Joint) => Box::new(JointClosedForm { points, n_d }),
        (_, Scheme::Oma) => return Err(Error::invalid("orthogonal access has no joint NOMA setup")),
        _ => Box::new(GridSearch::new(em, points, n_d, num.rate_candidates)?),
    };
    Ok(NomaSetup { model: em, grid, optimizer })
}

/// OMA users for every split considered.
pub fn oma_setups(sc: &Scenario, model: ChannelModel, num: &Numerics) -> Result<Vec<(f64, [OmaUser; 2])>> {
    sc.validate()?;
    let em = sc.error_model(model, Scheme::Oma)?;
    let splits: Vec<f64> = match num.oma_split {
        Some(s) => vec![s],
        None => OMA_SPLITS.to_vec(),
    };
    splits
        .into_iter()
        .map(|s| {
            let u = oma_policy(em, &sc.snr, &sc.training, sc.n_d(), s, num.grid_points, num.rate_candidates)?;
            Ok((s, u))
        })
        .collect()
}

/// The optimized policy of a scheme and its bounds for every deadline.
#[derive(Debug, Clone)]
pub enum SchemePolicy {
    Noma { policy: RatePolicy },
    Oma { split: f64, s: [f64; 2] },
}

#[derive(Debug, Clone)]
pub struct SchemeBounds {
    pub scheme: Scheme,
    pub policy: SchemePolicy,
    /// Per user, bounds for `w = 1..=w_max`.
    pub bounds: [Vec<DelayBound>; 2],
}

fn bounds_over_w(alpha: f64, service: &crate::snc::ServiceSpec, w_max: u32) -> Vec<DelayBound> {
    (1..=w_max)
        .filter_map(|w| delay_bound(&ArrivalSpec { alpha }, service, w).ok())
        .collect()
}

/// Optimizes rates for user 2's bound at its deadline, subject to user 1
/// meeting the target at its own, and evaluates both bounds for
/// `w = 1..=w_max`.
pub fn optimize_bounds(
    sc: &Scenario,
    model: ChannelModel,
    scheme: Scheme,
    num: &Numerics,
    w_max: u32,
) -> Result<(SchemeBounds, Option<NomaSetup>)> {
    let user1 = UserOne { alpha: sc.alpha[0], w: sc.w[0], target: sc.target };
    if scheme == Scheme::Oma {
        let mut best: Option<(f64, f64, f64, [f64; 2], usize)> = None;
        let setups = oma_setups(sc, model, num)?;
        for (i, (split, users)) in setups.iter().enumerate() {
            let Ok(b1) = users[0].bound(sc.alpha[0], sc.w[0]) else { continue };
            if b1.bound > sc.target * (1.0 + 1e-9) {
                continue;
            }
            let Ok(b2) = users[1].bound(sc.alpha[1], sc.w[1]) else { continue };
            if best.as_ref().is_none_or(|b| b2.bound < b.1) {
                best = Some((*split, b2.bound, b1.bound, [b1.s_opt, b2.s_opt], i));
            }
        }
        let Some((split, _, _, s, i)) = best else {
            return Err(Error::Infeasible(format!(
                "no OMA split lets user 1 meet {} at alpha {} and w {}",
                sc.target, sc.alpha[0], sc.w[0]
            )));
        };
        let users = &setups[i].1;
        let bounds = [0, 1].map(|k| bounds_over_w(sc.alpha[k], &users[k].service(s[k]), w_max));
        return Ok((SchemeBounds { scheme, policy: SchemePolicy::Oma { split, s }, bounds }, None));
    }
    let setup = noma_setup(sc, model, scheme, num)?;
    let res = outer_loop(
        setup.optimizer.as_ref(),
        user1,
        Objective::MinBound { alpha: sc.alpha[1], w: sc.w[1] },
        &num.outer,
        None,
    )?;
    let bounds = [0, 1].map(|k| bounds_over_w(sc.alpha[k], &res.policy.service(k), w_max));
    Ok((SchemeBounds { scheme, policy: SchemePolicy::Noma { policy: res.policy }, bounds }, Some(setup)))
}

/// One point of a max-arrival sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: String,
    pub alpha1_bits: f64,
    pub max_alpha2_bits: f64,
}

/// Largest `alpha_2` meeting the target at `sc.w[1]` for each `alpha_1`,
/// with user 1 meeting it at `sc.w[0]`.
pub fn sweep(
    sc: &Scenario,
    model: ChannelModel,
    scheme: Scheme,
    num: &Numerics,
    alpha1: &[f64],
) -> Result<Vec<SweepRow>> {
    let name = scheme.as_str().to_string();
    if scheme == Scheme::Oma {
        let setups = oma_setups(sc, model, num)?;
        let caps: Vec<(f64, f64)> = setups
            .iter()
            .map(|(_, u)| (u[0].max_arrival(sc.w[0], sc.target).0, u[1].max_arrival(sc.w[1], sc.target).0))
            .collect();
        return Ok(alpha1
            .iter()
            .map(|&a1| {
                let best = caps
                    .iter()
                    .zip(&setups)
                    .filter(|((c1, _), _)| *c1 >= a1)
                    .filter(|(_, (_, u))| u[0].bound(a1, sc.w[0]).is_ok_and(|b| b.bound <= sc.target * (1.0 + 1e-9)))
                    .map(|((_, c2), _)| *c2)
                    .fold(0.0, f64::max);
                SweepRow { scheme: name.clone(), alpha1_bits: a1, max_alpha2_bits: best }
            })
            .collect());
    }
    let setup = noma_setup(sc, model, scheme, num)?;
    let objective = Objective::MaxArrival { w: sc.w[1], target: sc.target };
    let mut warm = None;
    let mut rows = Vec::with_capacity(alpha1.len());
    for &a1 in alpha1 {
        let user1 = UserOne { alpha: a1, w: sc.w[0], target: sc.target };
        let mut res = outer_loop(setup.optimizer.as_ref(), user1, objective, &num.outer, warm);
        if warm.is_some() && !matches!(res, Ok(ref r) if r.alpha_2 > 0.0) {
            res = outer_loop(setup.optimizer.as_ref(), user1, objective, &num.outer, None);
        }
        let alpha_2 = match res {
            Ok(r) => {
                if r.alpha_2 > 0.0 {
                    warm = Some(r.s);
                }
                r.alpha_2
            }
            Err(Error::Infeasible(_)) => 0.0,
            Err(e) => return Err(e),
        };
        log::info!("{} {}: alpha1 = {a1:.1} -> alpha2 = {alpha_2:.1}", model.as_str(), name);
        rows.push(SweepRow { scheme: name.clone(), alpha1_bits: a1, max_alpha2_bits: alpha_2 });
    }
    Ok(rows)
}

/// Points of the ergodic reference curves per slot: NOMA (capacity region
/// averaged over fading) and OMA with time sharing at full power.
pub fn ergodic_rows(sc: &Scenario, alpha1: &[f64]) -> Result<Vec<SweepRow>> {
    const FINE: usize = 4000;
    const PAIR: usize = 300;
    let n_d = sc.n_d();
    let mean = |rho: f64| -> Result<f64> {
        let g = MarginalGrid::build(rho, 0.0, FINE)?;
        Ok(g.points.iter().map(|&x| r_max(x)).sum::<f64>() / FINE as f64)
    };
    let noma_1 = n_d * mean(sc.snr.rho_bar(0))?;
    let noma_2 = n_d * mean(sc.snr.rho_bar(1))?;
    let grid = build_grid(sc.snr.rho_bar_pair(), [0.0, 0.0], PAIR)?;
    let noma_sum = n_d * grid.points().map(|p| p.prob * r_sum(&SnrPair { gamma_1: p.rho_hat[0], gamma_2: p.rho_hat[1] })).sum::<f64>();
    let oma = [n_d * mean(sc.snr.rho_oma[0])?, n_d * mean(sc.snr.rho_oma[1])?];
    let mut rows = Vec::new();
    for &a1 in alpha1 {
        let noma = if a1 <= noma_1 { noma_2.min(noma_sum - a1).max(0.0) } else { 0.0 };
        rows.push(SweepRow { scheme: "ergodic-noma".into(), alpha1_bits: a1, max_alpha2_bits: noma });
    }
    for &a1 in alpha1 {
        let v = ((1.0 - a1 / oma[0]) * oma[1]).max(0.0);
        rows.push(SweepRow { scheme: "ergodic-oma".into(), alpha1_bits: a1, max_alpha2_bits: v });
    }
    Ok(rows)
}

/// One analytic-versus-oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub model: String,
    pub user: usize,
    pub rho_hat1_db: f64,
    pub rho_hat2_db: f64,
    pub r1: f64,
    pub r2: f64,
    pub order: DecodingOrder,
    pub eps_analytic: f64,
    pub eps_oracle: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Compares analytic error probabilities with exact-model oracles at the
/// given estimates and rates; two rows per tuple.
pub fn validate_eps(
    model: &ErrorModel,
    name: &str,
    channel: &ExactChannel,
    tuples: &[([f64; 2], RatePair)],
    samples: u64,
    seed: u64,
) -> Result<Vec<ValidationRow>> {
    let mut rows = Vec::with_capacity(2 * tuples.len());
    for (i, (rho_hat, rates)) in tuples.iter().enumerate() {
        let est = EstimatedState::from_estimates(*rho_hat, channel.rho_bar, channel.sigma_z2)?;
        let eps = model.eps(rates, &est)?;
        let OracleEstimate { eps: oracle } =
            oracle_eps(model, rates, channel, *rho_hat, samples, stream_seed(seed, i as u64))?;
        for k in 0..2 {
            rows.push(ValidationRow {
                model: name.to_string(),
                user: k + 1,
                rho_hat1_db: linear_to_db(rho_hat[0]),
                rho_hat2_db: linear_to_db(rho_hat[1]),
                r1: rates.r_1,
                r2: rates.r_2,
                order: rates.order,
                eps_analytic: eps.get(k),
                eps_oracle: oracle[k].estimate,
                ci_lo: oracle[k].lo,
                ci_hi: oracle[k].hi,
            });
        }
    }
    Ok(rows)
}

/// Random estimate/rate tuples: estimates from the exact channel, rates a
/// random fraction of the corner rates of a random decoding order.
pub fn random_tuples(channel: &ExactChannel, scheme: Scheme, count: usize, seed: u64) -> Vec<([f64; 2], RatePair)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let rho_hat = [0, 1].map(|k| sample_exact(channel.rho_bar[k], channel.sigma_z2[k], &mut rng).0);
            let [g1, g2] = rho_hat;
            let f = [rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)];
            let rates = match scheme {
                Scheme::Sic if rng.random::<bool>() => {
                    RatePair { r_1: f[0] * r_min(g1, g2), r_2: f[1] * r_max(g2), order: DecodingOrder::User1First }
                }
                Scheme::Sic => {
                    RatePair { r_1: f[0] * r_max(g1), r_2: f[1] * r_min(g2, g1), order: DecodingOrder::User2First }
                }
                _ => {
                    let sum = r_sum(&SnrPair { gamma_1: g1, gamma_2: g2 });
                    let r1 = r_min(g1, g2) + rng.random::<f64>() * (r_max(g1) - r_min(g1, g2));
                    RatePair { r_1: f[0] * r1, r_2: f[1] * (sum - r1), order: DecodingOrder::Joint }
                }
            };
            (rho_hat, rates)
        })
        .collect()
}

/// Bounds and simulations of one scheme in several fidelities.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub bounds: SchemeBounds,
    pub reports: Vec<SimReport>,
    /// Per report, per user.
    pub comparisons: Vec<[Comparison; 2]>,
}

impl SimOutcome {
    pub fn passed(&self) -> bool {
        self.comparisons.iter().flatten().all(Comparison::passed)
    }
}

/// Optimizes a scheme, then simulates its queues in each fidelity and
/// compares the empirical violation frequencies with the bounds.
pub fn simulate_scheme(
    sc: &Scenario,
    model: ChannelModel,
    scheme: Scheme,
    num: &Numerics,
    sim: &SimConfig,
    fidelities: &[Fidelity],
) -> Result<SimOutcome> {
    let (bounds, setup) = optimize_bounds(sc, model, scheme, num, sim.w_max)?;
    let mut reports = Vec::new();
    let mut comparisons = Vec::new();
    {
        let oma_users;
        let service: Box<dyn SlotService + '_> = match (&bounds.policy, &setup) {
            (SchemePolicy::Noma { policy }, Some(setup)) => {
                Box::new(NomaService::new(setup.model, policy, &setup.grid)?)
            }
            (SchemePolicy::Oma { split, s }, _) => {
                let mut n = *num;
                n.oma_split = Some(*split);
                oma_users = oma_setups(sc, model, &n)?.remove(0).1;
                Box::new(OmaService::new(&oma_users, *s))
            }
            _ => return Err(Error::invalid("missing NOMA setup")),
        };
        let cfg = SimConfig { alpha: sc.alpha, ..*sim };
        for &f in fidelities {
            let rep = simulate(service.as_ref(), f, &cfg)?;
            comparisons.push([compare(&rep.users[0], &bounds.bounds[0]), compare(&rep.users[1], &bounds.bounds[1])]);
            reports.push(rep);
        }
    }
    Ok(SimOutcome { bounds, reports, comparisons })
}
