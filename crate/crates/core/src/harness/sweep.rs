//! Parameter sweeps over the device count, the RB budget or the cost weights.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marl::StrategyRegistry;
use crate::metrics::fmt_f64;

use super::config::ExperimentConfig;
use super::run::{run_experiment, write_with_hash, RunSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Devices,
    ResourceBlocks,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Devices => "devices",
            SweepAxis::ResourceBlocks => "resource_blocks",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: usize) {
        match self {
            SweepAxis::Devices => cfg.devices = value,
            SweepAxis::ResourceBlocks => cfg.resource_blocks = value,
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "devices" | "m" => Ok(SweepAxis::Devices),
            "resource_blocks" | "rbs" | "i" => Ok(SweepAxis::ResourceBlocks),
            other => Err(Error::Config(format!("unknown sweep axis {other:?} (devices, resource_blocks)"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sample mean and sample standard deviation (n - 1); std is 0 for n = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

/// Mean and spread over seeds of one (point, mode) cell.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    /// Axis value, or the `(gamma_a, gamma_e)` pair.
    pub point: Vec<f64>,
    pub mode: String,
    pub runs: usize,
    pub sum_aoi: Stat,
    pub energy_j: Stat,
    pub weighted_cost: Stat,
    pub sample_interval_s: Option<Stat>,
    pub queue_delay_s: Option<Stat>,
    pub recon_err: Stat,
}

impl AggregateRow {
    /// Exact reduce over the per-run summaries, in the order given.
    pub fn from_runs(point: Vec<f64>, mode: &str, runs: &[RunSummary]) -> Option<Self> {
        let col = |f: &dyn Fn(&RunSummary) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        let opt = |f: &dyn Fn(&RunSummary) -> Option<f64>| Stat::of(&runs.iter().filter_map(f).collect::<Vec<_>>());
        Some(Self {
            point,
            mode: mode.to_string(),
            runs: runs.len(),
            sum_aoi: col(&|r| r.evaluation.mean_sum_aoi)?,
            energy_j: col(&|r| r.evaluation.mean_sum_energy_j)?,
            weighted_cost: col(&|r| r.evaluation.mean_weighted_cost)?,
            sample_interval_s: opt(&|r| r.mean_sample_interval_s),
            queue_delay_s: opt(&|r| r.evaluation.mean_queue_delay_s),
            recon_err: col(&|r| r.evaluation.mean_recon_err)?,
        })
    }
}

pub const METRIC_COLUMNS: [&str; 13] = [
    "mode",
    "runs",
    "mean_sum_aoi",
    "std_sum_aoi",
    "mean_energy_j",
    "std_energy_j",
    "mean_sample_interval_s",
    "std_sample_interval_s",
    "mean_queue_delay_s",
    "std_queue_delay_s",
    "mean_recon_err",
    "std_recon_err",
    "mean_weighted_cost",
];

/// Columns after the point columns; the cost spread closes the row.
pub fn aggregate_columns(point_columns: &[&str]) -> Vec<String> {
    point_columns
        .iter()
        .copied()
        .chain(METRIC_COLUMNS)
        .chain(["std_weighted_cost"])
        .map(str::to_string)
        .collect()
}

fn cells(row: &AggregateRow) -> Vec<String> {
    let opt = |s: Option<Stat>, f: fn(Stat) -> f64| s.map(|s| fmt_f64(f(s))).unwrap_or_default();
    let mut out: Vec<String> = row.point.iter().map(|v| fmt_f64(*v)).collect();
    out.extend([
        row.mode.clone(),
        row.runs.to_string(),
        fmt_f64(row.sum_aoi.mean),
        fmt_f64(row.sum_aoi.std),
        fmt_f64(row.energy_j.mean),
        fmt_f64(row.energy_j.std),
        opt(row.sample_interval_s, |s| s.mean),
        opt(row.sample_interval_s, |s| s.std),
        opt(row.queue_delay_s, |s| s.mean),
        opt(row.queue_delay_s, |s| s.std),
        fmt_f64(row.recon_err.mean),
        fmt_f64(row.recon_err.std),
        fmt_f64(row.weighted_cost.mean),
        fmt_f64(row.weighted_cost.std),
    ]);
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub point: Vec<f64>,
    pub mode: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<AggregateRow>,
    pub runs: Vec<(Vec<f64>, RunSummary)>,
    pub failures: Vec<RunFailure>,
}

impl SweepReport {
    pub fn row(&self, point: &[f64], mode: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.point == point && r.mode == mode)
    }
}

struct Job {
    point: Vec<f64>,
    cfg: ExperimentConfig,
    dir: Option<PathBuf>,
}

/// Runs every (point, mode, seed) in the pool, then reduces on one thread.
fn run_grid(jobs: Vec<Job>, registry: &StrategyRegistry) -> SweepReport {
    let tasks: Vec<(usize, String, u64)> = jobs
        .iter()
        .enumerate()
        .flat_map(|(j, job)| {
            job.cfg
                .modes
                .iter()
                .flat_map(move |mode| job.cfg.seeds.iter().map(move |&seed| (j, mode.clone(), seed)))
        })
        .collect();
    let results: Vec<(usize, String, u64, Result<RunSummary>)> = tasks
        .into_par_iter()
        .map(|(j, mode, seed)| {
            let job = &jobs[j];
            let dir = job.dir.as_ref().map(|d| d.join(&mode).join(format!("seed_{seed}")));
            let out = run_experiment(&job.cfg, registry, &mode, seed, dir.as_deref()).map(|r| r.summary);
            (j, mode, seed, out)
        })
        .collect();

    let mut report = SweepReport::default();
    for (j, job) in jobs.iter().enumerate() {
        for mode in &job.cfg.modes {
            let mut runs = Vec::new();
            for (_, _, seed, res) in results.iter().filter(|r| r.0 == j && &r.1 == mode) {
                match res {
                    Ok(summary) => {
                        runs.push(summary.clone());
                        report.runs.push((job.point.clone(), summary.clone()));
                    }
                    Err(e) => {
                        log::error!("run {mode} seed {seed} at {:?} failed: {e}", job.point);
                        report.failures.push(RunFailure {
                            point: job.point.clone(),
                            mode: mode.clone(),
                            seed: *seed,
                            error: e.to_string(),
                        });
                    }
                }
            }
            if let Some(row) = AggregateRow::from_runs(job.point.clone(), mode, &runs) {
                report.rows.push(row);
            }
        }
    }
    report
}

fn write_report(path: &Path, hash: &str, point_columns: &[&str], report: &SweepReport) -> Result<()> {
    write_with_hash(path, hash, |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(aggregate_columns(point_columns))?;
        for row in &report.rows {
            w.write_record(cells(row))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    })?;
    if !report.failures.is_empty() {
        let fail = path.with_file_name("failures.json");
        let text = serde_json::to_string_pretty(&report.failures)?;
        std::fs::write(&fail, text).map_err(|e| Error::io(&fail, e))?;
    }
    Ok(())
}

/// Sweeps one axis; per-run artifacts land under `out_dir/<axis>_<value>/`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    registry: &StrategyRegistry,
    axis: SweepAxis,
    values: &[usize],
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    let mut jobs = Vec::with_capacity(values.len());
    for &v in values {
        let mut point = cfg.clone();
        axis.apply(&mut point, v);
        point.validate()?;
        jobs.push(Job {
            point: vec![v as f64],
            dir: out_dir.map(|d| d.join(format!("{axis}_{v}"))),
            cfg: point,
        });
    }
    let report = run_grid(jobs, registry);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_report(&dir.join("sweep.csv"), &cfg.hash(), &[axis.name()], &report)?;
    }
    Ok(report)
}

/// Parses `start:end:step` into the inclusive list of AoI weights.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("grid {spec:?} is not start:end:step")))?;
    let (start, end, step) = match nums.as_slice() {
        [v] => (*v, *v, 1.0),
        [a, b, s] => (*a, *b, *s),
        _ => return Err(Error::Config(format!("grid {spec:?} is not start:end:step"))),
    };
    if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end || !(step > 0.0) {
        return Err(Error::Config(format!("grid {spec:?} must satisfy 0 <= start <= end <= 1, step > 0")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    // integer stepping avoids drift from repeated addition
    Ok((0..=count).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect())
}

/// One run set per `(gamma_a, 1 - gamma_a)` pair; writes `pareto.csv`.
pub fn pareto_sweep(
    cfg: &ExperimentConfig,
    registry: &StrategyRegistry,
    gamma_a: &[f64],
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    if gamma_a.is_empty() {
        return Err(Error::Config("weight grid is empty".into()));
    }
    let mut jobs = Vec::with_capacity(gamma_a.len());
    for &ga in gamma_a {
        let mut point = cfg.clone();
        point.gamma_a = ga;
        point.gamma_e = 1.0 - ga;
        point.validate()?;
        jobs.push(Job {
            point: vec![ga, point.gamma_e],
            dir: out_dir.map(|d| d.join(format!("gamma_a_{ga}"))),
            cfg: point,
        });
    }
    let report = run_grid(jobs, registry);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_report(&dir.join("pareto.csv"), &cfg.hash(), &["gamma_a", "gamma_e"], &report)?;
    }
    Ok(report)
}
