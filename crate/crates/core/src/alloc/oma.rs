//! Orthogonal-access baseline.
//!
//! Each user transmits alone at full power in its share of the data
//! symbols, so the two queues decouple. For every `s` the best policy picks,
//! per estimate, the rate minimizing `eps + (1 - eps) e^{-s n r}`, which makes
//! the delay bound a one-dimensional search over `s`.

use crate::channel::{r_max, AvgSnrConfig};
use crate::csi::{MarginalGrid, TrainingConfig};
use crate::errors::{sigma_fbl, Coding, CsiModel, Decoder, DispersionKind, ErrorModel, ErrorPair};
use crate::snc::{
    alpha_at, log_add_exp, log_kernel, log_service_term, minimize_log_s, DelayBound, ServiceAtom, ServiceSpec,
    S_MAX, S_MIN,
};
use crate::{Error, Result};

const S_GRID: usize = 40;

/// Rate adaptation of one user under orthogonal access.
#[derive(Debug, Clone)]
pub struct OmaUser {
    pub model: ErrorModel,
    pub grid: MarginalGrid,
    /// Codeword length of this user.
    pub n_d: f64,
    per_point: usize,
    rates: Vec<f64>,
    eps: Vec<f64>,
}

impl OmaUser {
    /// `model` fixes CSI and coding; a finite blocklength in it is replaced
    /// by `n_d`.
    pub fn new(model: ErrorModel, grid: MarginalGrid, n_d: f64, rate_candidates: usize) -> Result<Self> {
        if !(n_d >= 1.0) {
            return Err(Error::invalid(format!("OMA codewords need at least one symbol, got {n_d}")));
        }
        let coding = match model.coding {
            Coding::InfiniteBlocklength => Coding::InfiniteBlocklength,
            Coding::FiniteBlocklength { .. } => Coding::FiniteBlocklength { n_d },
        };
        let model = ErrorModel::new(model.csi, coding, Decoder::OmaSingleUser)?;
        let exact = model.csi == CsiModel::Perfect && coding == Coding::InfiniteBlocklength;
        let per_point = if exact { 1 } else { rate_candidates.max(2) };
        let mut rates = Vec::with_capacity(grid.len() * per_point);
        let mut eps = Vec::with_capacity(grid.len() * per_point);
        for j in 0..grid.len() {
            let g = grid.points[j];
            let s_ic = if model.csi == CsiModel::Perfect { 0.0 } else { grid.sigma_ic(j) };
            if exact {
                rates.push(r_max(g));
                eps.push(0.0);
                continue;
            }
            let sigma = match coding.n_d() {
                Some(n) => s_ic.hypot(sigma_fbl(g, n, DispersionKind::Awgn)),
                None => s_ic,
            };
            let lo = r_max((g - 8.0 * sigma).max(0.0));
            let hi = r_max(g + 3.0 * sigma);
            for c in 0..per_point {
                let r = lo + (hi - lo) * c as f64 / (per_point - 1) as f64;
                rates.push(r);
                eps.push(crate::errors::eps_oma(r, g, s_ic, coding.n_d()));
            }
        }
        Ok(Self { model, grid, n_d, per_point, rates, eps })
    }

    /// Best candidate per grid point at `s`.
    fn choice(&self, s: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        let x = s * self.n_d;
        (0..self.grid.len()).map(move |j| {
            (0..self.per_point)
                .map(|c| {
                    let i = j * self.per_point + c;
                    (i, log_service_term(self.eps[i], x * self.rates[i]))
                })
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
        })
    }

    /// `ln M_S(1 - s)` of the best policy at `s`.
    pub fn log_mellin(&self, s: f64) -> f64 {
        let lp = self.grid.prob().ln();
        self.choice(s).fold(f64::NEG_INFINITY, |acc, (_, t)| log_add_exp(acc, lp + t))
    }

    /// Service process of the best policy at `s`.
    pub fn service(&self, s: f64) -> ServiceSpec {
        let prob = self.grid.prob();
        ServiceSpec {
            n_d: self.n_d,
            atoms: self.choice(s).map(|(i, _)| ServiceAtom { prob, rate: self.rates[i], eps: self.eps[i] }).collect(),
        }
    }

    /// Per grid point `(rate, eps)` of the best policy at `s`.
    pub fn policy(&self, s: f64) -> Vec<(f64, f64)> {
        self.choice(s).map(|(i, _)| (self.rates[i], self.eps[i])).collect()
    }

    /// `inf_s K(s, w)` with the policy re-optimized for every `s`.
    pub fn bound(&self, alpha: f64, w: u32) -> Result<DelayBound> {
        let (s, lk) = minimize_log_s(|s| log_kernel(s * alpha, self.log_mellin(s), w as f64), S_MIN, S_MAX, S_GRID);
        if !(lk < f64::INFINITY) {
            return Err(Error::Unstable(format!("alpha = {alpha} bits exceeds the OMA service for every s")));
        }
        Ok(DelayBound { w, bound: lk.exp(), s_opt: s })
    }

    /// Largest arrival rate meeting `target` at deadline `w`, with the `s`
    /// attaining it.
    pub fn max_arrival(&self, w: u32, target: f64) -> (f64, f64) {
        let (s, neg) =
            minimize_log_s(|s| -alpha_at(s, self.log_mellin(s), w as f64, target), S_MIN, S_MAX, S_GRID);
        let a = -neg;
        if a.is_finite() && a > 0.0 {
            (a, s)
        } else {
            (0.0, s)
        }
    }

    /// Error probabilities of the candidate `rate` at grid point `j`.
    pub fn eps_at(&self, j: usize, rate: f64) -> f64 {
        let s_ic = if self.model.csi == CsiModel::Perfect { 0.0 } else { self.grid.sigma_ic(j) };
        crate::errors::eps_oma(rate, self.grid.points[j], s_ic, self.model.coding.n_d())
    }
}

/// Both users under orthogonal access; user 1 gets the fraction `split` of
/// the `n_d` data symbols.
pub fn oma_policy(
    model: ErrorModel,
    snr: &AvgSnrConfig,
    training: &TrainingConfig,
    n_d: f64,
    split: f64,
    grid_points: usize,
    rate_candidates: usize,
) -> Result<[OmaUser; 2]> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::invalid(format!("OMA split must lie in (0,1), got {split}")));
    }
    let s2 = match model.csi {
        CsiModel::Perfect => [0.0, 0.0],
        CsiModel::Imperfect => training.sigma_z2(),
    };
    let share = [split, 1.0 - split];
    let build = |k: usize| -> Result<OmaUser> {
        let grid = MarginalGrid::build(snr.rho_oma[k], s2[k], grid_points)?;
        OmaUser::new(model, grid, share[k] * n_d, rate_candidates)
    };
    Ok([build(0)?, build(1)?])
}

/// Delay bounds of both users.
pub fn oma_bound(users: &[OmaUser; 2], alpha: [f64; 2], w: u32) -> Result<[DelayBound; 2]> {
    Ok([users[0].bound(alpha[0], w)?, users[1].bound(alpha[1], w)?])
}

/// Largest `alpha_2` meeting `target` given that user 1 must meet it at
/// `alpha_1`; zero if user 1 cannot.
pub fn oma_max_arrival(users: &[OmaUser; 2], alpha_1: f64, w: u32, target: f64) -> f64 {
    let ok = users[0].bound(alpha_1, w).is_ok_and(|b| b.bound <= target);
    if ok {
        users[1].max_arrival(w, target).0
    } else {
        0.0
    }
}

/// Error pair of an OMA rate pair, for reporting.
pub fn oma_eps(users: &[OmaUser; 2], cells: [usize; 2], rates: [f64; 2]) -> ErrorPair {
    ErrorPair::from_array([users[0].eps_at(cells[0], rates[0]), users[1].eps_at(cells[1], rates[1])])
}
