//! Experiment configuration files.
//!
//! A config is a TOML document with one table per concern. SNR keys take
//! either linear values or dB values under the `_db` suffix, never both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use noma_delay::alloc::OuterConfig;
use noma_delay::channel::AvgSnrConfig;
use noma_delay::csi::TrainingConfig;
use noma_delay::experiment::{ChannelModel, Numerics, Scenario, Scheme};
use noma_delay::sim::{Fidelity, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub validate: ValidateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_oma: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_oma_db: Option<[f64; 2]>,
    pub beta: [f64; 2],
    pub n_tr: [u32; 2],
    /// Training SNR; defaults to `rho_oma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_tr: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_tr_db: Option<[f64; 2]>,
    pub n_total: u32,
    /// Bits per slot.
    pub alpha: [f64; 2],
    /// Deadlines in slots.
    pub w: [u32; 2],
    pub target_pv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub channel: ChannelModel,
    pub decoder: Scheme,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { channel: ChannelModel::Icsi, decoder: Scheme::Joint }
    }
}

/// Share of user 1 under OMA, or `"auto"` to pick the best.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmaSplit {
    Fixed(f64),
    Named(SplitName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    pub grid_points: usize,
    pub rate_candidates: usize,
    pub oma_split: OmaSplit,
    /// Bounds are reported for `w = 1..=w_max`.
    pub w_max: u32,
    pub outer_coarse: usize,
    pub outer_max_iter: usize,
    pub outer_rel_tol: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        let o = OuterConfig::default();
        Self {
            grid_points: 100,
            rate_candidates: 32,
            oma_split: OmaSplit::Fixed(0.5),
            w_max: 10,
            outer_coarse: o.coarse,
            outer_max_iter: o.max_iter,
            outer_rel_tol: o.rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub slots: u64,
    pub burn_in: u64,
    pub replications: u32,
    pub fidelities: Vec<Fidelity>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { slots: 1_000_000, burn_in: 1000, replications: 64, fidelities: vec![Fidelity::Exact, Fidelity::Approximate] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Explicit `alpha_1` values.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<Vec<f64>>,
    /// `[start, stop, step]`, used when `alpha1` is absent.
    pub alpha1_range: [f64; 3],
    pub schemes: Vec<Scheme>,
    pub ergodic: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            alpha1: None,
            alpha1_range: [0.0, 800.0, 100.0],
            schemes: vec![Scheme::Sic, Scheme::Joint, Scheme::Oma],
            ergodic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub tuples: usize,
    pub samples: u64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self { tuples: 20, samples: 1_000_000 }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

fn pick(name: &str, linear: Option<[f64; 2]>, db: Option<[f64; 2]>) -> Result<Option<[f64; 2]>, ConfigError> {
    match (linear, db) {
        (Some(_), Some(_)) => err(format!("give either `{name}` or `{name}_db`, not both")),
        (Some(v), None) => Ok(Some(v)),
        (None, Some(d)) => Ok(Some(d.map(noma_delay::db_to_linear))),
        (None, None) => Ok(None),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.scenario()?;
        cfg.numerics()?;
        cfg.alpha1_values()?;
        if cfg.sim.slots == 0 || cfg.sim.replications == 0 {
            return err("sim.slots and sim.replications must be positive");
        }
        if cfg.validate.samples == 0 {
            return err("validate.samples must be positive");
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let s = &self.scenario;
        let rho_oma = pick("rho_oma", s.rho_oma, s.rho_oma_db)?
            .ok_or_else(|| ConfigError("scenario needs `rho_oma` or `rho_oma_db`".into()))?;
        let snr = AvgSnrConfig::new(rho_oma, s.beta).map_err(|e| ConfigError(e.to_string()))?;
        let rho_tr = pick("rho_tr", s.rho_tr, s.rho_tr_db)?.unwrap_or(rho_oma);
        let training = TrainingConfig::new(s.n_tr, rho_tr).map_err(|e| ConfigError(e.to_string()))?;
        let sc = Scenario { snr, training, n_total: s.n_total, alpha: s.alpha, w: s.w, target: s.target_pv };
        sc.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.model.channel != ChannelModel::Pcsi && s.n_tr.contains(&0) {
            return err("imperfect CSI needs at least one training symbol per user");
        }
        Ok(sc)
    }

    pub fn numerics(&self) -> Result<Numerics, ConfigError> {
        let n = &self.numerics;
        if n.grid_points < 2 || n.rate_candidates < 2 {
            return err("grid_points and rate_candidates must be at least 2");
        }
        if n.w_max == 0 {
            return err("w_max must be at least 1");
        }
        let oma_split = match n.oma_split {
            OmaSplit::Fixed(x) if x > 0.0 && x < 1.0 => Some(x),
            OmaSplit::Fixed(x) => return err(format!("oma_split must lie in (0,1), got {x}")),
            OmaSplit::Named(SplitName::Auto) => None,
        };
        if !(n.outer_rel_tol > 0.0) || n.outer_max_iter == 0 || n.outer_coarse < 2 {
            return err("outer search settings out of range");
        }
        let outer = OuterConfig {
            coarse: n.outer_coarse,
            max_iter: n.outer_max_iter,
            rel_tol: n.outer_rel_tol,
            ..OuterConfig::default()
        };
        Ok(Numerics { grid_points: n.grid_points, rate_candidates: n.rate_candidates, oma_split, outer })
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            alpha: self.scenario.alpha,
            slots: self.sim.slots,
            burn_in: self.sim.burn_in,
            replications: self.sim.replications,
            w_max: self.numerics.w_max,
            seed: self.seed,
        }
    }

    pub fn alpha1_values(&self) -> Result<Vec<f64>, ConfigError> {
        if let Some(v) = &self.sweep.alpha1 {
            if v.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return err("sweep.alpha1 values must be finite and >= 0");
            }
            return Ok(v.clone());
        }
        let [start, stop, step] = self.sweep.alpha1_range;
        if !(start >= 0.0 && stop >= start && step > 0.0) {
            return err("sweep.alpha1_range must be [start, stop, step] with 0 <= start <= stop and step > 0");
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| start + step * i as f64).collect())
    }
}
