use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aoi_core::harness::{
    fit_trace, load_config, pareto_sweep, parse_grid, run_experiment, run_selftest, run_sweep, save_config,
    ExperimentConfig, SelftestScale, SweepAxis, SweepReport, TraceSource,
};
use aoi_core::marl::StrategyRegistry;

/// AoI-aware sampling and scheduling simulator.
///
/// Settings resolve in this order, later wins: built-in defaults, the
/// `--config` file, then command-line flags. Log verbosity comes from
/// `RUST_LOG` (default `info`).
#[derive(Parser)]
#[command(name = "aoi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one mode for one seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Strategy name (see `aoi modes`).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep the device count or the RB budget over every configured mode and seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// devices or resource_blocks.
        #[arg(long, default_value = "devices")]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Sweep the AoI weight as start:end:step, with the energy weight at one minus it.
    Pareto {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0:1:0.1")]
        grid: String,
    },
    /// Fit process dynamics to a CSV trace (timestamp column first).
    Fit {
        #[arg(long)]
        csv: PathBuf,
        /// Write the fit report as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized oracle and invariant checks.
    Selftest {
        /// Smaller instance counts.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the registered strategy names.
    Modes,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    resource_blocks: Option<usize>,
    /// Total slots, training plus evaluation.
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    eval_slots: Option<u64>,
    /// Comma-separated seeds (sweeps only).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated modes (sweeps only).
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.devices {
            cfg.devices = v;
        }
        if let Some(v) = self.resource_blocks {
            cfg.resource_blocks = v;
        }
        if let Some(v) = self.slots {
            cfg.slots = v;
        }
        if let Some(v) = self.eval_slots {
            cfg.eval_slots = v;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.modes {
            cfg.modes = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_modes(registry: &StrategyRegistry, modes: &[String]) -> Result<()> {
    for m in modes {
        if !registry.contains(m) {
            bail!("unknown mode {m:?}; registered: {}", registry.names().join(", "));
        }
    }
    Ok(())
}

fn finish_sweep(report: &SweepReport, cfg: &ExperimentConfig, file: &str) -> Result<ExitCode> {
    save_config(cfg, &cfg.out_dir.join("config.toml"))?;
    for row in &report.rows {
        println!(
            "{:?} {:<14} sum AoI {:.4} ± {:.4}  energy {:.3e} J  cost {:.4}",
            row.point, row.mode, row.sum_aoi.mean, row.sum_aoi.std, row.energy_j.mean, row.weighted_cost.mean
        );
    }
    println!("wrote {}", cfg.out_dir.join(file).display());
    if report.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} run(s) failed; see failures.json", report.failures.len());
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let registry = StrategyRegistry::with_defaults();
    match cli.command {
        Command::Run { common, mode, seed } => {
            let mut cfg = common.resolve()?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            check_modes(&registry, std::slice::from_ref(&cfg.mode))?;
            let seed = seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0);
            std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
            save_config(&cfg, &cfg.out_dir.join("config.toml"))?;
            let result = run_experiment(&cfg, &registry, &cfg.mode, seed, Some(&cfg.out_dir))?;
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.resolve()?;
            check_modes(&registry, &cfg.modes)?;
            let report = run_sweep(&cfg, &registry, axis, &values, Some(&cfg.out_dir))?;
            finish_sweep(&report, &cfg, "sweep.csv")
        }
        Command::Pareto { common, grid } => {
            let cfg = common.resolve()?;
            check_modes(&registry, &cfg.modes)?;
            let weights = parse_grid(&grid)?;
            let report = pareto_sweep(&cfg, &registry, &weights, Some(&cfg.out_dir))?;
            finish_sweep(&report, &cfg, "pareto.csv")
        }
        Command::Fit { csv, out } => {
            let source = TraceSource::from_path(&csv)?;
            let fit = fit_trace(&source)?;
            let json = serde_json::to_string_pretty(&fit)?;
            match out {
                Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            for w in &fit.warnings {
                eprintln!("warning: {w}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { quick, seed } => {
            let scale = if quick { SelftestScale::quick() } else { SelftestScale::full() };
            let outcomes = run_selftest(scale, seed);
            for c in &outcomes {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("{status} {:<28} {:>6} cases {:>7.2}s  {}", c.name, c.instances, c.seconds, c.detail);
            }
            Ok(if outcomes.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Modes => {
            for name in registry.names() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
