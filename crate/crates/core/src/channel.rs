//! Rayleigh block fading and the two-user Gaussian multiple-access channel.
//!
//! All SNRs are linear. The capacity region of the MAC for a fixed SNR pair
//! is the pentagon
//!
//! ```text
//! r1 <= log2(1 + g1),  r2 <= log2(1 + g2),  r1 + r2 <= log2(1 + g1 + g2)
//! ```
//!
//! whose two non-trivial corners are reached by successive interference
//! cancellation (SIC). Rates exactly on the boundary count as decodable.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Average SNRs and the power split between the two users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvgSnrConfig {
    /// Average SNR of each user when it transmits alone with full power.
    pub rho_oma: [f64; 2],
    /// Fraction of the sum power given to each user under NOMA.
    pub beta: [f64; 2],
}

impl AvgSnrConfig {
    pub fn new(rho_oma: [f64; 2], beta: [f64; 2]) -> Result<Self> {
        for k in 0..2 {
            if !(rho_oma[k].is_finite() && rho_oma[k] > 0.0) {
                return Err(Error::invalid(format!(
                    "average SNR of user {} must be positive, got {}",
                    k + 1,
                    rho_oma[k]
                )));
            }
            if !(beta[k] > 0.0 && beta[k] < 1.0) {
                return Err(Error::invalid(format!(
                    "power fraction of user {} must lie in (0,1), got {}",
                    k + 1,
                    beta[k]
                )));
            }
        }
        if ((beta[0] + beta[1]) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "power fractions must sum to 1, got {} + {}",
                beta[0], beta[1]
            )));
        }
        Ok(Self { rho_oma, beta })
    }

    /// Builds the config from SNRs in dB.
    pub fn from_db(rho_oma_db: [f64; 2], beta: [f64; 2]) -> Result<Self> {
        Self::new(rho_oma_db.map(crate::db_to_linear), beta)
    }

    /// Average NOMA SNR of user `k` (0-based): `beta_k * rho_oma_k`.
    pub fn rho_bar(&self, k: usize) -> f64 {
        self.beta[k] * self.rho_oma[k]
    }

    pub fn rho_bar_pair(&self) -> [f64; 2] {
        [self.rho_bar(0), self.rho_bar(1)]
    }
}

/// Instantaneous SNR pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPair {
    pub gamma_1: f64,
    pub gamma_2: f64,
}

impl SnrPair {
    pub fn new(gamma_1: f64, gamma_2: f64) -> Result<Self> {
        for g in [gamma_1, gamma_2] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::invalid(format!("SNR must be finite and >= 0, got {g}")));
            }
        }
        Ok(Self { gamma_1, gamma_2 })
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.gamma_1, self.gamma_2]
    }
}

/// Which signal the receiver decodes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingOrder {
    /// User 1 is decoded first, under interference from user 2 (corner B).
    User1First,
    /// User 2 is decoded first, under interference from user 1 (corner A).
    User2First,
    /// Both codewords are decoded jointly.
    Joint,
}

impl DecodingOrder {
    /// For SIC orders, the 0-based index of the user decoded first
    /// (the interfered one).
    pub fn first_decoded(self) -> Option<usize> {
        match self {
            DecodingOrder::User1First => Some(0),
            DecodingOrder::User2First => Some(1),
            DecodingOrder::Joint => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecodingOrder::User1First => "user1_first",
            DecodingOrder::User2First => "user2_first",
            DecodingOrder::Joint => "joint",
        }
    }
}

impl std::fmt::Display for DecodingOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DecodingOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user1_first" | "B" => Ok(DecodingOrder::User1First),
            "user2_first" | "A" => Ok(DecodingOrder::User2First),
            "joint" => Ok(DecodingOrder::Joint),
            other => Err(Error::invalid(format!("unknown decoding order '{other}'"))),
        }
    }
}

/// Coding rates in bits per channel use, plus the decoding order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub r_1: f64,
    pub r_2: f64,
    pub order: DecodingOrder,
}

impl RatePair {
    pub fn new(r_1: f64, r_2: f64, order: DecodingOrder) -> Result<Self> {
        for r in [r_1, r_2] {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::invalid(format!("rate must be finite and >= 0, got {r}")));
            }
        }
        Ok(Self { r_1, r_2, order })
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.r_1, self.r_2]
    }

    pub(crate) fn from_array(r: [f64; 2], order: DecodingOrder) -> Self {
        Self { r_1: r[0], r_2: r[1], order }
    }
}

/// Rate of a user decoded under interference of SNR `gamma_b`.
pub fn r_min(gamma_a: f64, gamma_b: f64) -> f64 {
    (gamma_a / (gamma_b + 1.0)).ln_1p() * std::f64::consts::LOG2_E
}

/// Interference-free rate `log2(1 + gamma)`.
pub fn r_max(gamma: f64) -> f64 {
    gamma.ln_1p() * std::f64::consts::LOG2_E
}

/// Sum-rate limit `log2(1 + g1 + g2)`.
pub fn r_sum(pair: &SnrPair) -> f64 {
    (pair.gamma_1 + pair.gamma_2).ln_1p() * std::f64::consts::LOG2_E
}

/// The two SIC corner points `(A, B)` of the capacity region.
///
/// Corner A decodes user 2 first, so user 1 gets its interference-free
/// rate; corner B is the reverse.
pub fn corner_points(pair: &SnrPair) -> (RatePair, RatePair) {
    let (g1, g2) = (pair.gamma_1, pair.gamma_2);
    let a = RatePair::from_array([r_max(g1), r_min(g2, g1)], DecodingOrder::User2First);
    let b = RatePair::from_array([r_min(g1, g2), r_max(g2)], DecodingOrder::User1First);
    (a, b)
}

/// Whether `rates` lies in the capacity region (boundary included).
pub fn in_region(rates: &RatePair, pair: &SnrPair) -> bool {
    rates.r_1 <= r_max(pair.gamma_1)
        && rates.r_2 <= r_max(pair.gamma_2)
        && rates.r_1 + rates.r_2 <= r_sum(pair)
}

/// Draws a circularly-symmetric complex Gaussian with total variance
/// `variance`, returned as `(re, im)`.
pub fn sample_complex_normal<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> (f64, f64) {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    (scale * re, scale * im)
}

/// Draws an instantaneous Rayleigh-fading SNR `rho_bar * |h|^2` with
/// `h ~ CN(0, 1)`.
pub fn sample_snr<R: Rng + ?Sized>(rho_bar: f64, rng: &mut R) -> f64 {
    let (re, im) = sample_complex_normal(1.0, rng);
    rho_bar * (re * re + im * im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(g1: f64, g2: f64) -> SnrPair {
        SnrPair::new(g1, g2).unwrap()
    }

    #[test]
    fn rate_formulas() {
        assert_eq!(r_min(3.0, 0.0), 2.0);
        assert_eq!(r_min(0.0, 5.0), 0.0);
        assert!((r_min(15.0, 3.0) - 2.247927513443585).abs() < 1e-12);
        assert_eq!(r_max(0.0), 0.0);
        assert!((r_max(1.0) - 1.0).abs() < 1e-15);
        assert!((r_max(3.0) - 2.0).abs() < 1e-15);
        assert!((r_sum(&pair(1.0, 2.0)) - 2.0).abs() < 1e-15);
        assert_eq!(r_sum(&pair(0.0, 0.0)), 0.0);
        assert!((r_sum(&pair(3.0, 0.0)) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn corners() {
        let (a, b) = corner_points(&pair(3.0, 0.0));
        assert_eq!(a.as_array(), [2.0, 0.0]);
        assert_eq!(b.as_array(), [2.0, 0.0]);

        let (a, b) = corner_points(&pair(1.0, 2.0));
        assert!((a.r_1 - 1.0).abs() < 1e-15 && (a.r_2 - 1.0).abs() < 1e-15);
        assert!((b.r_1 - (4.0f64 / 3.0).log2()).abs() < 1e-15);
        assert!((b.r_2 - 3f64.log2()).abs() < 1e-15);
        assert!((b.r_1 + b.r_2 - 2.0).abs() < 1e-14);
        assert_eq!(a.order, DecodingOrder::User2First);
        assert_eq!(b.order, DecodingOrder::User1First);

        let (a, b) = corner_points(&pair(0.0, 0.0));
        assert_eq!(a.as_array(), [0.0, 0.0]);
        assert_eq!(b.as_array(), [0.0, 0.0]);
    }

    #[test]
    fn region_membership() {
        let j = DecodingOrder::Joint;
        assert!(in_region(&RatePair::new(1.0, 1.0, j).unwrap(), &pair(1.0, 2.0)));
        assert!(!in_region(&RatePair::new(2.1, 0.0, j).unwrap(), &pair(3.0, 0.0)));
        assert!(in_region(&RatePair::new(0.5, 0.5, j).unwrap(), &pair(1.0, 2.0)));
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(SnrPair::new(-1.0, 0.0).is_err());
        assert!(SnrPair::new(f64::NAN, 0.0).is_err());
        assert!(RatePair::new(f64::INFINITY, 0.0, DecodingOrder::Joint).is_err());
        assert!(AvgSnrConfig::new([10.0, 10.0], [0.3, 0.3]).is_err());
        assert!(AvgSnrConfig::new([0.0, 10.0], [0.5, 0.5]).is_err());
        let c = AvgSnrConfig::from_db([30.0, 15.0], [0.2, 0.8]).unwrap();
        assert!((c.rho_bar(0) - 200.0).abs() < 1e-9);
        assert!((c.rho_bar(1) - 0.8 * 31.622776601683793).abs() < 1e-9);
    }

    #[test]
    fn rayleigh_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut sum, mut above) = (0.0, 0usize);
        for _ in 0..n {
            let g = sample_snr(100.0, &mut rng);
            sum += g;
            if g > 100.0 {
                above += 1;
            }
        }
        assert!((sum / n as f64 - 100.0).abs() < 0.5);
        assert!((above as f64 / n as f64 - (-1f64).exp()).abs() < 0.01);
        assert!(sample_snr(1e-300, &mut rng) < 1e-290);
    }

    proptest! {
        #[test]
        fn pentagon_corner_identity(g1 in 0.0f64..1e4, g2 in 0.0f64..1e4) {
            let p = pair(g1, g2);
            let sum = r_sum(&p);
            let tol = 1e-12 * sum.max(1e-300);
            prop_assert!((r_min(g1, g2) + r_max(g2) - sum).abs() <= tol.max(1e-15));
            prop_assert!((r_max(g1) + r_min(g2, g1) - sum).abs() <= tol.max(1e-15));
            prop_assert!(r_min(g1, g2) <= r_max(g1));
        }

        #[test]
        fn monotone_rates(g in 0.0f64..1e3, dg in 0.0f64..10.0, i in 0.0f64..1e3, di in 0.0f64..10.0) {
            prop_assert!(r_max(g + dg) >= r_max(g));
            prop_assert!(r_min(g + dg, i) >= r_min(g, i));
            prop_assert!(r_min(g, i + di) <= r_min(g, i));
        }

        #[test]
        fn dominant_face_is_decodable(g1 in 0.0f64..1e3, g2 in 0.0f64..1e3, t in 0.0f64..=1.0) {
            let p = pair(g1, g2);
            let (a, b) = corner_points(&p);
            // Shrink by a relative ulp-scale margin: the face is exactly on the
            // sum-rate boundary, so rounding can land either side of it.
            let shrink = 1.0 - 1e-12;
            let mix = RatePair::new(
                shrink * (t * a.r_1 + (1.0 - t) * b.r_1),
                shrink * (t * a.r_2 + (1.0 - t) * b.r_2),
                DecodingOrder::Joint,
            ).unwrap();
            prop_assert!(in_region(&mix, &p));
        }
    }
}
