//! Stochastic network calculus in the SNR domain.
//!
//! Bit-domain processes are mapped through `exp`, and the delay-violation
//! probability of a queue with constant arrivals `alpha` and i.i.d. service
//! is bounded by the kernel
//!
//! ```text
//! K(s, w) = M_S(1 - s)^w / (1 - M_A(1 + s) M_S(1 - s))
//! ```
//!
//! minimized over `s > 0` wherever the stability condition
//! `M_A(1 + s) M_S(1 - s) < 1` holds. Everything is evaluated in the log
//! domain because `M_S` underflows quickly for long codewords.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Constant arrivals of `alpha` bits per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSpec {
    pub alpha: f64,
}

impl ArrivalSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::invalid(format!("arrival rate must be finite and >= 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn log_mellin(&self, s: f64) -> f64 {
        s * self.alpha
    }
}

/// One atom of the per-slot service distribution of a user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceAtom {
    pub prob: f64,
    /// Coding rate in bits per channel use.
    pub rate: f64,
    /// Probability that the codeword is lost.
    pub eps: f64,
}

/// Service of one user: `n_d * rate` bits with probability `1 - eps` in
/// each state, nothing otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub n_d: f64,
    pub atoms: Vec<ServiceAtom>,
}

impl ServiceSpec {
    pub fn new(n_d: f64, atoms: Vec<ServiceAtom>) -> Result<Self> {
        if !(n_d.is_finite() && n_d > 0.0) {
            return Err(Error::invalid(format!("n_d must be positive, got {n_d}")));
        }
        for a in &atoms {
            if !(0.0..=1.0).contains(&a.eps) || !(a.prob >= 0.0) || !(a.rate >= 0.0) {
                return Err(Error::invalid(format!("invalid service atom {a:?}")));
            }
        }
        Ok(Self { n_d, atoms })
    }

    /// `ln M_S(1 - s)`.
    pub fn log_mellin(&self, s: f64) -> f64 {
        log_sum_exp(self.atoms.iter().filter(|a| a.prob > 0.0).map(|a| {
            a.prob.ln() + log_service_term(a.eps, s * self.n_d * a.rate)
        }))
    }

    /// Mean service in bits per slot.
    pub fn mean_bits(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * (1.0 - a.eps) * self.n_d * a.rate).sum()
    }
}

/// `ln(eps + (1 - eps) e^{-x})`.
pub(crate) fn log_service_term(eps: f64, x: f64) -> f64 {
    if eps <= 0.0 {
        -x
    } else if eps >= 1.0 {
        0.0
    } else {
        log_add_exp(eps.ln(), (-eps).ln_1p() - x)
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    terms.fold(f64::NEG_INFINITY, log_add_exp)
}

/// `M_A(1 + s) = e^{s alpha}`.
pub fn mellin_arrival(spec: &ArrivalSpec, s: f64) -> f64 {
    spec.log_mellin(s).exp()
}

/// `M_S(1 - s) = sum_i p_i (eps_i + (1 - eps_i) e^{-s n_d r_i})`.
pub fn mellin_service(spec: &ServiceSpec, s: f64) -> f64 {
    spec.log_mellin(s).exp()
}

/// Stability condition `ma * ms < 1`.
pub fn stability(ma: f64, ms: f64) -> bool {
    ma * ms < 1.0
}

/// The kernel `ms^w / (1 - ma ms)`.
pub fn kernel(ma: f64, ms: f64, w: u32) -> Result<f64> {
    if !stability(ma, ms) {
        return Err(Error::Unstable(format!("ma * ms = {} >= 1", ma * ms)));
    }
    Ok(log_kernel(ma.ln(), ms.ln(), w as f64).exp())
}

/// Log of the kernel from log Mellin values; `+inf` when unstable.
pub fn log_kernel(log_ma: f64, log_ms: f64, w: f64) -> f64 {
    let x = log_ma + log_ms;
    if !(x < 0.0) {
        return f64::INFINITY;
    }
    if log_ms == f64::NEG_INFINITY {
        return if w > 0.0 { f64::NEG_INFINITY } else { 0.0 };
    }
    w * log_ms - (-x.exp_m1()).ln()
}

/// Tightest kernel value over `s` and the minimizing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBound {
    pub w: u32,
    pub bound: f64,
    pub s_opt: f64,
}

pub const S_MIN: f64 = 1e-5;
pub const S_MAX: f64 = 10.0;
const S_GRID: usize = 40;

/// Minimizes `f` over `log s` in `[ln lo, ln hi]`: a coarse grid, then a
/// golden-section refinement between the neighbours of the best grid point.
/// Returns `(s, f(s))` for the best point seen. Non-finite values (other than
/// `-inf`) are treated as infeasible.
pub fn minimize_log_s(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (points - 1) as f64;
    let mut best = (f64::NAN, f64::INFINITY);
    let mut best_idx = None;
    for i in 0..points {
        let x = a + step * i as f64;
        let v = f(x.exp());
        if v < best.1 {
            best = (x, v);
            best_idx = Some(i);
        }
    }
    let Some(i) = best_idx else {
        return (f64::NAN, f64::INFINITY);
    };
    if best.1 == f64::NEG_INFINITY {
        return (best.0.exp(), best.1);
    }
    let (mut l, mut r) = (a + step * i.saturating_sub(1) as f64, a + step * (i + 1).min(points - 1) as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = r - g * (r - l);
    let mut x2 = l + g * (r - l);
    let mut f1 = f(x1.exp());
    let mut f2 = f(x2.exp());
    for _ in 0..60 {
        if f1 < best.1 {
            best = (x1, f1);
        }
        if f2 < best.1 {
            best = (x2, f2);
        }
        if r - l < 1e-10 {
            break;
        }
        if f1 <= f2 {
            r = x2;
            x2 = x1;
            f2 = f1;
            x1 = r - g * (r - l);
            f1 = f(x1.exp());
        } else {
            l = x1;
            x1 = x2;
            f1 = f2;
            x2 = l + g * (r - l);
            f2 = f(x2.exp());
        }
    }
    (best.0.exp(), best.1)
}

/// `inf_s K(s, w)` for one user.
pub fn delay_bound(arrival: &ArrivalSpec, service: &ServiceSpec, w: u32) -> Result<DelayBound> {
    let (s, lk) = minimize_log_s(
        |s| log_kernel(arrival.log_mellin(s), service.log_mellin(s), w as f64),
        S_MIN,
        S_MAX,
        S_GRID,
    );
    if !(lk < f64::INFINITY) {
        return Err(Error::Unstable(format!(
            "alpha = {} bits exceeds the service for every s in [{S_MIN}, {S_MAX}]",
            arrival.alpha
        )));
    }
    Ok(DelayBound { w, bound: lk.exp(), s_opt: s })
}

/// Largest `ms` with `ms^w / (1 - ma ms) <= target`, in the log domain.
///
/// This is the budget a rate policy must meet on `M_S(1 - s)` for a fixed
/// `s` to keep the kernel below the target.
pub fn log_service_budget(log_ma: f64, w: f64, target: f64) -> f64 {
    let lt = target.ln();
    // Kernel is increasing in ms on (0, 1/ma); bisect on ln ms.
    let (mut lo, mut hi) = (-1e4f64, -log_ma);
    if log_kernel(log_ma, lo, w) > lt {
        return f64::NEG_INFINITY;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if log_kernel(log_ma, mid, w) <= lt {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * lo.abs().max(1.0) {
            break;
        }
    }
    lo
}

/// Largest arrival rate supported at parameter `s` for the given log
/// Mellin service value:
/// `(ln(1 - ms^w / target) - ln ms) / s`, or `-inf` if even zero arrivals
/// miss the target.
pub fn alpha_at(s: f64, log_ms: f64, w: f64, target: f64) -> f64 {
    let lt = target.ln();
    let lead = w * log_ms - lt;
    if !(lead < 0.0) {
        return f64::NEG_INFINITY;
    }
    ((-lead.exp_m1()).ln() - log_ms) / s
}

/// Largest `alpha` (closed form in `s`, maximized over `s`) such that
/// `inf_s K(s, w) <= target`. Returns `(alpha, s)`.
pub fn max_arrival_exact(service: &ServiceSpec, w: u32, target: f64) -> (f64, f64) {
    let (s, neg) = minimize_log_s(
        |s| -alpha_at(s, service.log_mellin(s), w as f64, target),
        S_MIN,
        S_MAX,
        S_GRID,
    );
    let a = -neg;
    if a.is_finite() && a > 0.0 {
        (a, s)
    } else {
        (0.0, s)
    }
}

/// Largest `alpha` with `delay_bound <= target`, by bisection to 0.1 bit.
pub fn max_arrival(service: &ServiceSpec, w: u32, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(format!("target must lie in (0,1), got {target}")));
    }
    let meets = |alpha: f64| {
        delay_bound(&ArrivalSpec { alpha }, service, w).is_ok_and(|b| b.bound <= target)
    };
    if !meets(0.0) {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, service.mean_bits() + 1.0);
    while hi - lo > 0.1 {
        let mid = 0.5 * (lo + hi);
        if meets(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
