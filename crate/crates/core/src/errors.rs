//! Decoding-error probabilities.
//!
//! Closed-form approximations for every combination of channel knowledge
//! (perfect or imperfect CSI), coding (infinite or finite blocklength) and
//! receiver (SIC, joint decoding, or orthogonal single-user access), plus
//! Monte Carlo oracles that sample the exact model instead.
//!
//! Under imperfect CSI the true SNR given its estimate is approximated as
//! `N(rho_hat, sigma_ic^2)`. Finite blocklength coding adds the Gaussian
//! blocklength-equivalent capacity `C + sqrt(V / n_d) U`.

use std::f64::consts::{LOG2_E, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{r_max, r_min, r_sum, DecodingOrder, RatePair, SnrPair};
use crate::csi::{sample_conditional, EstimatedState};
use crate::stats::Proportion;
use crate::{Error, Result};

/// `log2(e)^2`.
pub const LOG2E_SQ: f64 = LOG2_E * LOG2_E;

const Q_CUTOFF: f64 = 38.0;

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    if x > Q_CUTOFF {
        0.0
    } else if x < -Q_CUTOFF {
        1.0
    } else {
        0.5 * libm::erfc(x / SQRT_2)
    }
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`q_function`].
///
/// Starts from the rational approximation of Abramowitz and Stegun 26.2.23
/// and polishes with Newton steps on `ln Q`, which stay well conditioned far
/// into the tail.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("q_inverse needs p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-q_inverse_tail(1.0 - p));
    }
    Ok(q_inverse_tail(p))
}

fn q_inverse_tail(p: f64) -> f64 {
    let t = (-2.0 * p.ln()).sqrt();
    let mut x = t
        - (2.515517 + 0.802853 * t + 0.010328 * t * t)
            / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    let target = p.ln();
    for _ in 0..50 {
        let q = q_function(x);
        if q <= 0.0 {
            x -= 0.5;
            continue;
        }
        let step = (q.ln() - target) * q / normal_pdf(x);
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

const BOUNDARY_SLACK: f64 = 1e-12;

/// `a >= b` up to a relative rounding slack, so that a rate computed as
/// `log2(1 + x)` still counts as lying on its own boundary.
fn at_least(a: f64, b: f64) -> bool {
    a >= b - BOUNDARY_SLACK * a.abs().max(b.abs())
}

/// `Q((a - b) / den)` with the step limit for `den = 0`.
///
/// `a = b` counts as success, matching the convention that rates on the
/// capacity boundary are decodable.
fn q_ratio(a: f64, b: f64, den: f64) -> f64 {
    if den > 0.0 {
        q_function((a - b) / den)
    } else if at_least(a, b) {
        0.0
    } else {
        1.0
    }
}

/// Whether `rate` is within the capacity `cap`, boundary included.
fn fits(rate: f64, cap: f64) -> bool {
    at_least(cap, rate)
}

/// Which channel dispersion applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionKind {
    /// Power-shell codebooks on the AWGN channel.
    Awgn,
    /// I.i.d. Gaussian codebooks.
    Iid,
}

/// AWGN channel dispersion `log2(e)^2 (1 - (1 + g)^-2)`.
pub fn dispersion_awgn(gamma: f64) -> f64 {
    if gamma.is_infinite() {
        return LOG2E_SQ;
    }
    let inv = 1.0 / (1.0 + gamma);
    LOG2E_SQ * (1.0 - inv * inv)
}

/// Dispersion of i.i.d. Gaussian codebooks `log2(e)^2 2g / (1 + g)`.
pub fn dispersion_iid(gamma: f64) -> f64 {
    if gamma.is_infinite() {
        return 2.0 * LOG2E_SQ;
    }
    LOG2E_SQ * 2.0 * gamma / (1.0 + gamma)
}

/// Dispersion of the sum-rate constraint of the two-user MAC.
pub fn dispersion_mac(gamma_1: f64, gamma_2: f64) -> f64 {
    let s = 1.0 + gamma_1 + gamma_2;
    dispersion_awgn(gamma_1 + gamma_2) + 2.0 * LOG2E_SQ * gamma_1 * gamma_2 / (s * s)
}

pub fn dispersion(kind: DispersionKind, gamma: f64) -> f64 {
    match kind {
        DispersionKind::Awgn => dispersion_awgn(gamma),
        DispersionKind::Iid => dispersion_iid(gamma),
    }
}

/// Finite-blocklength spread mapped to the SNR domain by a first-order
/// Taylor expansion: `(1 + g) / log2(e) * sqrt(V(g) / n_d)`.
pub fn sigma_fbl(gamma: f64, n_d: f64, kind: DispersionKind) -> f64 {
    (1.0 + gamma) / LOG2_E * (dispersion(kind, gamma) / n_d).sqrt()
}

/// Finite-blocklength error probability with perfect CSI.
pub fn eps_fbl_pcsi(rate: f64, sinr: f64, n_d: f64, kind: DispersionKind) -> f64 {
    let cap = r_max(sinr);
    if rate == cap {
        return 0.5;
    }
    q_ratio(cap, rate, (dispersion(kind, sinr) / n_d).sqrt())
}

/// Probabilities that the codeword of each user is not decoded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub eps_1: f64,
    pub eps_2: f64,
}

impl ErrorPair {
    pub fn from_array(e: [f64; 2]) -> Self {
        Self { eps_1: e[0].clamp(0.0, 1.0), eps_2: e[1].clamp(0.0, 1.0) }
    }

    pub fn both(eps: f64) -> Self {
        Self::from_array([eps, eps])
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.eps_1, self.eps_2]
    }

    pub fn get(&self, user: usize) -> f64 {
        self.as_array()[user]
    }
}

fn phi(rate: f64) -> f64 {
    rate.exp2() - 1.0
}

fn check_rates(rates: &RatePair) -> Result<()> {
    if !(rates.r_1.is_finite() && rates.r_2.is_finite() && rates.r_1 >= 0.0 && rates.r_2 >= 0.0) {
        return Err(Error::invalid(format!(
            "rates must be finite and >= 0, got ({}, {})",
            rates.r_1, rates.r_2
        )));
    }
    Ok(())
}

/// Parameters of the SIC error expressions, indexed by role rather than by
/// user: `p` is the user decoded last, `f` the one decoded first.
#[derive(Debug, Clone, Copy)]
struct SicRoles {
    rho_p: f64,
    rho_f: f64,
    phi_p: f64,
    phi_f: f64,
    /// Spread of the true SNR of `p` (estimation only).
    sigma_p: f64,
    /// Spread of `p` after cancellation, including coding noise.
    sigma_p_dec: f64,
    /// Spread of the received power of `f` as seen by the first decoder.
    sigma_f: f64,
}

/// Approximate probability that `f` cannot be decoded under interference
/// while the SNR of `p` exceeds `lo`, with `sigma_p` the spread of the
/// latter.
///
/// The Gaussian tail of the first decoder is bounded by the Chernoff bound
/// `Q(x) <= exp(-x^2/2)/2` below the turning point `rho_f/phi_f - 1` and by
/// one above it.
fn interference_error(r: &SicRoles, lo: f64, sigma_p: f64) -> f64 {
    let turn = if r.phi_f > 0.0 { r.rho_f / r.phi_f - 1.0 } else { f64::INFINITY };
    let split = turn.max(lo);
    let upper = if split.is_finite() { q_ratio(split, r.rho_p, sigma_p) } else { 0.0 };
    if r.sigma_f == 0.0 || split <= lo {
        return upper;
    }
    let miss = r.rho_f - r.phi_f * (1.0 + r.rho_p);
    if sigma_p == 0.0 {
        let inside = r.rho_p >= lo && !at_least(r.rho_p, split);
        let lower = if inside { 0.5 * (-miss * miss / (2.0 * r.sigma_f * r.sigma_f)).exp() } else { 0.0 };
        return upper + lower;
    }
    let (sp2, sf2) = (sigma_p * sigma_p, r.sigma_f * r.sigma_f);
    let d = sf2 + sp2 * r.phi_f * r.phi_f;
    let c = miss * miss / (2.0 * d);
    let sigma_n = sigma_p * r.sigma_f / d.sqrt();
    let mu_n = (r.rho_p * sf2 + sp2 * r.phi_f * (r.rho_f - r.phi_f)) / d;
    let q_hi = if split.is_finite() { q_function((split - mu_n) / sigma_n) } else { 0.0 };
    let lower = 0.5 * (r.sigma_f / d.sqrt()) * (-c).exp() * (q_function((lo - mu_n) / sigma_n) - q_hi);
    upper + lower.max(0.0)
}

/// Returns `(eps_p, eps_f)`.
fn sic_errors(r: &SicRoles) -> (f64, f64) {
    if r.rho_f == 0.0 && r.phi_f > 0.0 {
        return (1.0, 1.0);
    }
    let eps_f = interference_error(r, 0.0, r.sigma_p).clamp(0.0, 1.0);
    if r.rho_p == 0.0 && r.phi_p > 0.0 {
        return (1.0, eps_f);
    }
    let no_interf = q_ratio(r.rho_p, r.phi_p, r.sigma_p_dec);
    // Coding noise of `p` also blurs where the interference region starts.
    let eps_p = (no_interf + interference_error(r, r.phi_p, r.sigma_p_dec)).clamp(0.0, 1.0);
    (eps_p, eps_f)
}

fn sic_roles(rates: &RatePair, est: &EstimatedState, n_d: Option<f64>) -> Result<(SicRoles, usize)> {
    let f = rates.order.first_decoded().ok_or_else(|| {
        Error::invalid("SIC error model needs a SIC decoding order, got joint")
    })?;
    let p = 1 - f;
    let r = rates.as_array();
    let (rho_p, rho_f) = (est.rho_hat[p], est.rho_hat[f]);
    let (sigma_p, sigma_f_ic) = (est.sigma_ic[p], est.sigma_ic[f]);
    let (sigma_p_dec, sigma_f) = match n_d {
        None => (sigma_p, sigma_f_ic),
        Some(n) => {
            let sp = sigma_fbl(rho_p, n, DispersionKind::Iid);
            let sf = (1.0 + rho_p) * sigma_fbl(rho_f / (rho_p + 1.0), n, DispersionKind::Iid);
            (sigma_p.hypot(sp), sigma_f_ic.hypot(sf))
        }
    };
    let roles = SicRoles {
        rho_p,
        rho_f,
        phi_p: phi(r[p]),
        phi_f: phi(r[f]),
        sigma_p,
        sigma_p_dec,
        sigma_f,
    };
    Ok((roles, f))
}

fn sic_pair(rates: &RatePair, est: &EstimatedState, n_d: Option<f64>) -> Result<ErrorPair> {
    check_rates(rates)?;
    let (roles, f) = sic_roles(rates, est, n_d)?;
    let (eps_p, eps_f) = sic_errors(&roles);
    let mut e = [0.0; 2];
    e[f] = eps_f;
    e[1 - f] = eps_p;
    Ok(ErrorPair::from_array(e))
}

/// SIC error probabilities under imperfect CSI.
///
/// `rates.order` selects the user decoded first; the same routine serves
/// both orders with the roles of the users exchanged.
pub fn eps_sic_icsi(rates: &RatePair, est: &EstimatedState) -> Result<ErrorPair> {
    sic_pair(rates, est, None)
}

/// SIC error probabilities under imperfect CSI and finite blocklength.
pub fn eps_sic_icsi_fbl(rates: &RatePair, est: &EstimatedState, n_d: f64) -> Result<ErrorPair> {
    check_n_d(n_d)?;
    sic_pair(rates, est, Some(n_d))
}

fn check_n_d(n_d: f64) -> Result<()> {
    if !(n_d >= 1.0) {
        return Err(Error::invalid(format!("blocklength must be >= 1, got {n_d}")));
    }
    Ok(())
}

fn joint_terms(rates: &RatePair, est: &EstimatedState, n_d: Option<f64>) -> Result<f64> {
    check_rates(rates)?;
    let [g1, g2] = est.rho_hat;
    let [s1, s2] = est.sigma_ic;
    let (t1, t2, t3) = match n_d {
        None => (s1, s2, s1.hypot(s2)),
        Some(n) => {
            let f1 = sigma_fbl(g1, n, DispersionKind::Awgn);
            let f2 = sigma_fbl(g2, n, DispersionKind::Awgn);
            let sum = 1.0 + g1 + g2;
            let f3_sq = sum * sum / LOG2E_SQ * dispersion_mac(g1, g2) / n;
            (s1.hypot(f1), s2.hypot(f2), (s1 * s1 + s2 * s2 + f3_sq).sqrt())
        }
    };
    let e = q_ratio(g1, phi(rates.r_1), t1)
        + q_ratio(g2, phi(rates.r_2), t2)
        + q_ratio(g1 + g2, phi(rates.r_1 + rates.r_2), t3);
    Ok(e.min(1.0))
}

/// Joint-decoding error probability under imperfect CSI (union bound).
/// Both codewords are lost together.
pub fn eps_joint_icsi(rates: &RatePair, est: &EstimatedState) -> Result<f64> {
    joint_terms(rates, est, None)
}

/// Joint-decoding error probability under imperfect CSI and finite
/// blocklength.
pub fn eps_joint_icsi_fbl(rates: &RatePair, est: &EstimatedState, n_d: f64) -> Result<f64> {
    check_n_d(n_d)?;
    joint_terms(rates, est, Some(n_d))
}

/// Single-user error probability for orthogonal access at full power.
///
/// `n_d_oma` is the user's own codeword length, `None` for infinite
/// blocklength.
pub fn eps_oma(rate: f64, rho_hat: f64, sigma_ic: f64, n_d_oma: Option<f64>) -> f64 {
    let sigma = match n_d_oma {
        None => sigma_ic,
        Some(n) => sigma_ic.hypot(sigma_fbl(rho_hat, n, DispersionKind::Awgn)),
    };
    q_ratio(rho_hat, phi(rate), sigma)
}

/// Knowledge of the channel at the transmitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiModel {
    Perfect,
    Imperfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coding {
    InfiniteBlocklength,
    FiniteBlocklength { n_d: f64 },
}

impl Coding {
    pub fn n_d(&self) -> Option<f64> {
        match self {
            Coding::InfiniteBlocklength => None,
            Coding::FiniteBlocklength { n_d } => Some(*n_d),
        }
    }
}

/// Receiver type. For SIC the decoding order is carried by each rate pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    Sic,
    Joint,
    OmaSingleUser,
}

/// Full description of how decoding errors arise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub csi: CsiModel,
    pub coding: Coding,
    pub decoder: Decoder,
}

impl ErrorModel {
    pub fn new(csi: CsiModel, coding: Coding, decoder: Decoder) -> Result<Self> {
        if let Some(n) = coding.n_d() {
            check_n_d(n)?;
        }
        Ok(Self { csi, coding, decoder })
    }

    /// Analytic error probabilities of `rates` at estimate `est`.
    ///
    /// With perfect CSI the spreads in `est` are zero and the expressions
    /// reduce to region membership (infinite blocklength) or the
    /// perfect-CSI finite-blocklength approximation.
    pub fn eps(&self, rates: &RatePair, est: &EstimatedState) -> Result<ErrorPair> {
        let n_d = self.coding.n_d();
        match self.decoder {
            Decoder::Sic => sic_pair(rates, est, n_d),
            Decoder::Joint => {
                if rates.order != DecodingOrder::Joint {
                    return Err(Error::invalid("joint error model needs the joint decoding order"));
                }
                joint_terms(rates, est, n_d).map(ErrorPair::both)
            }
            Decoder::OmaSingleUser => {
                check_rates(rates)?;
                let r = rates.as_array();
                let e = [0, 1].map(|k| eps_oma(r[k], est.rho_hat[k], est.sigma_ic[k], n_d));
                Ok(ErrorPair::from_array(e))
            }
        }
    }
}

/// Decoding outcome for one channel realization of the exact model.
///
/// `gamma` holds the true SNRs. Under finite blocklength each capacity is
/// replaced by its blocklength-equivalent version with a fresh standard
/// normal drawn from `rng`. Returns per-user success.
pub fn decode_outcome<R: Rng + ?Sized>(
    model: &ErrorModel,
    rates: &RatePair,
    gamma: [f64; 2],
    rng: &mut R,
) -> [bool; 2] {
    let n_d = model.coding.n_d();
    let mut spread = |v: f64| -> f64 {
        match n_d {
            None => 0.0,
            Some(n) => {
                let u: f64 = rng.sample(StandardNormal);
                (v / n).sqrt() * u
            }
        }
    };
    let r = rates.as_array();
    match model.decoder {
        Decoder::Sic => {
            let Some(f) = rates.order.first_decoded() else {
                return [false, false];
            };
            let p = 1 - f;
            let sinr = gamma[f] / (gamma[p] + 1.0);
            let cap_f = r_min(gamma[f], gamma[p]) + spread(dispersion_iid(sinr));
            let ok_f = fits(r[f], cap_f);
            let ok_p = ok_f && fits(r[p], r_max(gamma[p]) + spread(dispersion_iid(gamma[p])));
            let mut ok = [false; 2];
            ok[f] = ok_f;
            ok[p] = ok_p;
            ok
        }
        Decoder::Joint => {
            let pair = SnrPair { gamma_1: gamma[0], gamma_2: gamma[1] };
            let c1 = r_max(gamma[0]) + spread(dispersion_awgn(gamma[0]));
            let c2 = r_max(gamma[1]) + spread(dispersion_awgn(gamma[1]));
            let c12 = r_sum(&pair) + spread(dispersion_mac(gamma[0], gamma[1]));
            let ok = fits(r[0], c1) && fits(r[1], c2) && fits(r[0] + r[1], c12);
            [ok, ok]
        }
        Decoder::OmaSingleUser => {
            [0, 1].map(|k| fits(r[k], r_max(gamma[k]) + spread(dispersion_awgn(gamma[k]))))
        }
    }
}

/// Exact-model description needed to sample the true SNR given an
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactChannel {
    pub rho_bar: [f64; 2],
    pub sigma_z2: [f64; 2],
}

/// Empirical error frequencies with 95% Wilson intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub eps: [Proportion; 2],
}

const ORACLE_CHUNK: u64 = 1 << 16;

/// Seed of an independent stream, derived from a base seed and an index.
pub fn stream_seed(seed: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte Carlo error frequencies of `rates` given the estimate pair
/// `rho_hat`, drawing true SNRs from the exact conditional law.
///
/// Samples are processed in fixed-size chunks with per-chunk streams, so
/// the result does not depend on the number of threads.
pub fn oracle_eps(
    model: &ErrorModel,
    rates: &RatePair,
    channel: &ExactChannel,
    rho_hat: [f64; 2],
    samples: u64,
    seed: u64,
) -> Result<OracleEstimate> {
    check_rates(rates)?;
    if samples == 0 {
        return Err(Error::invalid("oracle needs at least one sample"));
    }
    let chunks = samples.div_ceil(ORACLE_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, c));
            let n = ORACLE_CHUNK.min(samples - c * ORACLE_CHUNK);
            let mut fail = [0u64; 2];
            for _ in 0..n {
                let gamma = [0, 1].map(|k| {
                    sample_conditional(channel.rho_bar[k], channel.sigma_z2[k], rho_hat[k], &mut rng)
                });
                let ok = decode_outcome(model, rates, gamma, &mut rng);
                for k in 0..2 {
                    fail[k] += u64::from(!ok[k]);
                }
            }
            fail
        })
        .reduce(|| [0, 0], |a, b| [a[0] + b[0], a[1] + b[1]]);
    Ok(OracleEstimate { eps: counts.map(|c| Proportion::new(c, samples)) })
}
