//! Subcommand implementations. Each writes one CSV table and a JSON sidecar
//! named after the command into the output directory.

use std::error::Error as StdError;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use noma_delay::alloc::oma_eps;
use noma_delay::errors::ExactChannel;
use noma_delay::experiment::{
    ergodic_rows, oma_setups, optimize_bounds, random_tuples, simulate_scheme, sweep, validate_eps, Scheme,
    SchemeBounds, SchemePolicy,
};
use noma_delay::linear_to_db;
use noma_delay::sim::Verdict;

use crate::config::ExperimentConfig;

pub type CliResult<T> = std::result::Result<T, Box<dyn StdError>>;

/// Version of the CSV and sidecar layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Bound,
    Optimize,
    Simulate,
    Sweep,
    ValidateEps,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Bound => "bound",
            Command::Optimize => "optimize",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::ValidateEps => "validate_eps",
        }
    }
}

/// Serde name of a unit enum variant.
fn tag<T: Serialize>(x: &T) -> String {
    match serde_json::to_value(x) {
        Ok(Value::String(s)) => s,
        _ => String::new(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_sidecar(out: &Path, cmd: Command, cfg: &ExperimentConfig, summary: Value) -> CliResult<()> {
    let sc = cfg.scenario()?;
    let model = cfg.model.channel;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": cmd.name(),
        "seed": cfg.seed,
        "config": cfg,
        "derived": {
            "rho_bar": sc.snr.rho_bar_pair(),
            "sigma_z2": sc.sigma_z2(model),
            "n_d": sc.n_d(),
        },
        "summary": summary,
    });
    let f = File::create(out.join(format!("{}.json", cmd.name())))?;
    serde_json::to_writer_pretty(f, &doc)?;
    Ok(())
}

#[derive(Serialize)]
struct BoundRow {
    scheme: &'static str,
    user: usize,
    w: u32,
    bound: f64,
    s_opt: f64,
}

fn bound_rows(b: &SchemeBounds) -> Vec<BoundRow> {
    let mut rows = Vec::new();
    for (k, list) in b.bounds.iter().enumerate() {
        for d in list {
            rows.push(BoundRow { scheme: b.scheme.as_str(), user: k + 1, w: d.w, bound: d.bound, s_opt: d.s_opt });
        }
    }
    rows
}

fn at_deadline(b: &SchemeBounds, cfg: &ExperimentConfig) -> [Option<f64>; 2] {
    [0, 1].map(|k| b.bounds[k].iter().find(|d| d.w == cfg.scenario.w[k]).map(|d| d.bound))
}

fn policy_summary(p: &SchemePolicy) -> Value {
    match p {
        SchemePolicy::Noma { policy } => json!({ "s": policy.params.s, "lambda": policy.params.lambda }),
        SchemePolicy::Oma { split, s } => json!({ "split": split, "s": s }),
    }
}

pub fn bound(cfg: &ExperimentConfig, out: &Path) -> CliResult<PathBuf> {
    let sc = cfg.scenario()?;
    let num = cfg.numerics()?;
    let (b, _) = optimize_bounds(&sc, cfg.model.channel, cfg.model.decoder, &num, cfg.numerics.w_max)?;
    let path = out.join("bound.csv");
    write_csv(&path, &bound_rows(&b))?;
    let [b1, b2] = at_deadline(&b, cfg);
    println!("{} {}: user 1 bound {:?} at w = {}, user 2 bound {:?} at w = {}",
        cfg.model.channel.as_str(), b.scheme.as_str(), b1, cfg.scenario.w[0], b2, cfg.scenario.w[1]);
    let summary = json!({ "bound_at_deadline": [b1, b2], "policy": policy_summary(&b.policy) });
    write_sidecar(out, Command::Bound, cfg, summary)?;
    Ok(path)
}

#[derive(Serialize)]
struct PolicyRow {
    scheme: &'static str,
    user: Option<usize>,
    index: usize,
    prob: f64,
    rho_hat1: Option<f64>,
    rho_hat2: Option<f64>,
    r1: Option<f64>,
    r2: Option<f64>,
    order: Option<String>,
    eps1: Option<f64>,
    eps2: Option<f64>,
}

pub fn optimize(cfg: &ExperimentConfig, out: &Path) -> CliResult<PathBuf> {
    let sc = cfg.scenario()?;
    let mut num = cfg.numerics()?;
    let scheme = cfg.model.decoder;
    let (b, _) = optimize_bounds(&sc, cfg.model.channel, scheme, &num, cfg.numerics.w_max)?;
    let mut rows = Vec::new();
    match &b.policy {
        SchemePolicy::Noma { policy } => {
            for (i, p) in policy.points.iter().enumerate() {
                rows.push(PolicyRow {
                    scheme: scheme.as_str(),
                    user: None,
                    index: i,
                    prob: p.prob,
                    rho_hat1: Some(p.rho_hat[0]),
                    rho_hat2: Some(p.rho_hat[1]),
                    r1: Some(p.rates.r_1),
                    r2: Some(p.rates.r_2),
                    order: Some(p.rates.order.as_str().to_string()),
                    eps1: Some(p.eps.eps_1),
                    eps2: Some(p.eps.eps_2),
                });
            }
        }
        SchemePolicy::Oma { split, s } => {
            num.oma_split = Some(*split);
            let users = oma_setups(&sc, cfg.model.channel, &num)?.remove(0).1;
            for k in 0..2 {
                let prob = users[k].grid.prob();
                for (j, (rate, _)) in users[k].policy(s[k]).into_iter().enumerate() {
                    let mut cells = [0, 0];
                    cells[k] = j;
                    let mut rates = [0.0, 0.0];
                    rates[k] = rate;
                    let e = oma_eps(&users, cells, rates).get(k);
                    let rho = users[k].grid.points[j];
                    let (one, two) = if k == 0 { (Some(rho), None) } else { (None, Some(rho)) };
                    let (r1, r2) = if k == 0 { (Some(rate), None) } else { (None, Some(rate)) };
                    let (e1, e2) = if k == 0 { (Some(e), None) } else { (None, Some(e)) };
                    rows.push(PolicyRow {
                        scheme: scheme.as_str(),
                        user: Some(k + 1),
                        index: j,
                        prob,
                        rho_hat1: one,
                        rho_hat2: two,
                        r1,
                        r2,
                        order: None,
                        eps1: e1,
                        eps2: e2,
                    });
                }
            }
        }
    }
    let path = out.join("policy.csv");
    write_csv(&path, &rows)?;
    let [b1, b2] = at_deadline(&b, cfg);
    println!("{} {}: {} policy rows, bounds at deadlines {:?} / {:?}",
        cfg.model.channel.as_str(), scheme.as_str(), rows.len(), b1, b2);
    let summary = json!({ "bound_at_deadline": [b1, b2], "policy": policy_summary(&b.policy), "rows": rows.len() });
    write_sidecar(out, Command::Optimize, cfg, summary)?;
    Ok(path)
}

#[derive(Serialize)]
struct SimRow {
    scheme: &'static str,
    fidelity: String,
    user: usize,
    w: u32,
    bound: f64,
    pv: f64,
    ci_lo: f64,
    ci_hi: f64,
    violations: u64,
    batches: u64,
    verdict: String,
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> CliResult<PathBuf> {
    let sc = cfg.scenario()?;
    let num = cfg.numerics()?;
    let scheme = cfg.model.decoder;
    let res = simulate_scheme(&sc, cfg.model.channel, scheme, &num, &cfg.sim_config(), &cfg.sim.fidelities)?;
    let mut rows = Vec::new();
    let mut per_run = Vec::new();
    for (rep, cmp) in res.reports.iter().zip(&res.comparisons) {
        let fidelity = tag(&rep.fidelity);
        for k in 0..2 {
            for r in &cmp[k].rows {
                rows.push(SimRow {
                    scheme: scheme.as_str(),
                    fidelity: fidelity.clone(),
                    user: k + 1,
                    w: r.w,
                    bound: r.bound,
                    pv: r.pv.estimate,
                    ci_lo: r.pv.lo,
                    ci_hi: r.pv.hi,
                    violations: r.pv.count,
                    batches: r.pv.trials,
                    verdict: tag(&r.verdict),
                });
            }
            let fails = cmp[k].rows.iter().filter(|r| r.verdict == Verdict::Fail).count();
            println!("{fidelity} user {}: {} of {} deadlines fail{}{}", k + 1, fails, cmp[k].rows.len(),
                if rep.users[k].saturated { ", queue saturated" } else { "" },
                cmp[k].slopes.map(|(e, a)| format!(", slopes {e:.3} empirical vs {a:.3} bound")).unwrap_or_default());
            per_run.push(json!({
                "fidelity": fidelity,
                "user": k + 1,
                "passed": cmp[k].passed(),
                "saturated": rep.users[k].saturated,
                "final_backlog": rep.users[k].final_backlog,
                "slopes": cmp[k].slopes,
            }));
        }
    }
    let path = out.join("simulate.csv");
    write_csv(&path, &rows)?;
    println!("dominance {}", if res.passed() { "holds" } else { "violated" });
    let summary = json!({ "passed": res.passed(), "runs": per_run, "policy": policy_summary(&res.bounds.policy) });
    write_sidecar(out, Command::Simulate, cfg, summary)?;
    Ok(path)
}

pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> CliResult<PathBuf> {
    let sc = cfg.scenario()?;
    let num = cfg.numerics()?;
    let alpha1 = cfg.alpha1_values()?;
    let mut rows = Vec::new();
    for &scheme in &cfg.sweep.schemes {
        let part = sweep(&sc, cfg.model.channel, scheme, &num, &alpha1)?;
        for r in &part {
            println!("{} alpha1 {:.1} -> alpha2 {:.1}", r.scheme, r.alpha1_bits, r.max_alpha2_bits);
        }
        rows.extend(part);
    }
    if cfg.sweep.ergodic {
        rows.extend(ergodic_rows(&sc, &alpha1)?);
    }
    let path = out.join("sweep.csv");
    write_csv(&path, &rows)?;
    let schemes: Vec<&str> = cfg.sweep.schemes.iter().map(|s| s.as_str()).collect();
    let summary = json!({ "alpha1": alpha1, "schemes": schemes, "rows": rows.len() });
    write_sidecar(out, Command::Sweep, cfg, summary)?;
    Ok(path)
}

pub fn validate(cfg: &ExperimentConfig, out: &Path) -> CliResult<PathBuf> {
    let sc = cfg.scenario()?;
    let scheme = cfg.model.decoder;
    if scheme == Scheme::Oma {
        return Err("validate-eps compares the two-user decoders; set model.decoder to sic or joint".into());
    }
    let channel_model = cfg.model.channel;
    let model = sc.error_model(channel_model, scheme)?;
    let channel = ExactChannel { rho_bar: sc.snr.rho_bar_pair(), sigma_z2: sc.sigma_z2(channel_model) };
    let name = format!("{}-{}", channel_model.as_str(), scheme.as_str());
    let tuples = random_tuples(&channel, scheme, cfg.validate.tuples, cfg.seed);
    let rows = validate_eps(&model, &name, &channel, &tuples, cfg.validate.samples, cfg.seed)?;
    let path = out.join("validate_eps.csv");
    write_csv(&path, &rows)?;
    let mut outside = 0;
    let mut compared = 0;
    for r in &rows {
        if r.eps_oracle > 0.0 {
            compared += 1;
            let ratio = r.eps_analytic / r.eps_oracle;
            if !(0.5..=5.0).contains(&ratio) {
                outside += 1;
                log::warn!("user {} at ({:.1}, {:.1}) dB: analytic {:.3e} vs oracle {:.3e}",
                    r.user, r.rho_hat1_db, r.rho_hat2_db, r.eps_analytic, r.eps_oracle);
            }
        }
    }
    println!("{name}: {} rows, {outside} of {compared} with an observed oracle outside [0.5, 5] x", rows.len());
    let summary = json!({
        "rows": rows.len(),
        "compared": compared,
        "outside_band": outside,
        "rho_hat_db": tuples.iter().map(|t| [linear_to_db(t.0[0]), linear_to_db(t.0[1])]).collect::<Vec<_>>(),
    });
    write_sidecar(out, Command::ValidateEps, cfg, summary)?;
    Ok(path)
}
