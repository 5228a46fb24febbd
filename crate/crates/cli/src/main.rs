use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::CliResult;
use config::ExperimentConfig;

/// Delay-violation bounds and simulations for two-user uplink NOMA and OMA.
#[derive(Debug, Parser)]
#[command(name = "noma-delay", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`, then `.`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Optimize rates for the configured decoder and report the delay bounds over w.
    Bound(Common),
    /// Optimize rates and write the per-estimate policy.
    Optimize(Common),
    /// Simulate the queues under the optimized policy and compare with the bounds.
    Simulate(Common),
    /// Largest user-2 arrival rate versus user-1 arrival rate.
    Sweep(Common),
    /// Compare analytic error probabilities with Monte Carlo oracles.
    ValidateEps(Common),
}

fn run(cli: Cli) -> CliResult<PathBuf> {
    let (cmd, common) = match cli.command {
        Cmd::Bound(c) => (commands::Command::Bound, c),
        Cmd::Optimize(c) => (commands::Command::Optimize, c),
        Cmd::Simulate(c) => (commands::Command::Simulate, c),
        Cmd::Sweep(c) => (commands::Command::Sweep, c),
        Cmd::ValidateEps(c) => (commands::Command::ValidateEps, c),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.or(cfg.output.take()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    log::info!("{} -> {}", cmd.name(), out.display());
    match cmd {
        commands::Command::Bound => commands::bound(&cfg, &out),
        commands::Command::Optimize => commands::optimize(&cfg, &out),
        commands::Command::Simulate => commands::simulate(&cfg, &out),
        commands::Command::Sweep => commands::run_sweep(&cfg, &out),
        commands::Command::ValidateEps => commands::validate(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(path) => {
            println!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
