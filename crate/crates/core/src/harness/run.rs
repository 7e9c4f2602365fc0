//! Single experiment runs and their on-disk artifacts.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::marl::{run_episode, EpisodeOptions, EpisodeOutput, LossRow, StrategyRegistry, StrategySetup, System};
use crate::metrics::{fmt_f64, WindowSummary};

use super::config::ExperimentConfig;

pub const LOSS_COLUMNS: [&str; 4] = ["iteration", "loss", "mean_reward", "epsilon"];

/// Headline numbers for one (mode, seed) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub devices: usize,
    pub resource_blocks: usize,
    pub slots: u64,
    pub training_slots: u64,
    pub evaluation: WindowSummary,
    pub whole_run: WindowSummary,
    /// Mean time between samples per device in the evaluation window.
    pub mean_sample_interval_s: Option<f64>,
    pub train_steps: usize,
    pub truncated_delays: u64,
    pub overwritten_packets: u64,
    pub skipped_updates: u64,
    pub feedback_deliveries: u64,
    pub wall_time_s: f64,
}

pub struct RunResult {
    pub summary: RunSummary,
    pub output: EpisodeOutput,
}

/// Runs one mode for one seed; writes artifacts when `out_dir` is given.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    registry: &StrategyRegistry,
    mode: &str,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    let started = Instant::now();
    cfg.validate()?;
    let params = cfg.system_params(seed)?;
    let mut system = System::new(params, seed)?;
    let setup = StrategySetup {
        devices: cfg.devices,
        rb_count: cfg.resource_blocks,
        trainer: cfg.trainer.clone(),
        seed,
    };
    let mut strategy = registry.build(mode, &setup)?;
    let opts = EpisodeOptions {
        slots: cfg.slots,
        eval_slots: cfg.eval_slots,
        trainer: cfg.trainer.clone(),
    };
    let output = run_episode(&mut system, strategy.as_mut(), &opts)?;
    let evaluation = output.evaluation();
    let eval_window = (cfg.slots - output.training_slots) as f64 * cfg.slot_duration_s * cfg.devices as f64;
    let summary = RunSummary {
        mode: mode.to_string(),
        seed,
        config_hash: cfg.hash(),
        devices: cfg.devices,
        resource_blocks: cfg.resource_blocks,
        slots: cfg.slots,
        training_slots: output.training_slots,
        evaluation,
        whole_run: output.ledger.summarize_from(0),
        mean_sample_interval_s: (output.eval_samples > 0).then(|| eval_window / output.eval_samples as f64),
        train_steps: output.losses.len(),
        truncated_delays: output.truncated_delays,
        overwritten_packets: output.overwritten_packets,
        skipped_updates: output.skipped_updates,
        feedback_deliveries: output.feedback_deliveries,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hash = &summary.config_hash;
        write_with_hash(&dir.join("ledger.csv"), hash, |w| output.ledger.write_csv(w))?;
        write_with_hash(&dir.join("loss.csv"), hash, |w| write_losses(&output.losses, w))?;
        let json = serde_json::to_string_pretty(&summary)?;
        std::fs::write(dir.join("summary.json"), json).map_err(|e| Error::io(dir.join("summary.json"), e))?;
        write_checkpoint(&dir.join("checkpoint"), strategy.as_ref(), mode, seed, hash)?;
    }
    log::info!(
        "{mode} seed {seed}: eval cost {:.4}, sum AoI {:.4}, {} train steps",
        summary.evaluation.mean_weighted_cost,
        summary.evaluation.mean_sum_aoi,
        summary.train_steps
    );
    Ok(RunResult { summary, output })
}

/// First line of every CSV artifact: `# config_hash=<hex>`.
pub fn write_with_hash(
    path: &Path,
    hash: &str,
    body: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "# config_hash={hash}").map_err(|e| Error::io(path, e))?;
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_losses(rows: &[LossRow], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOSS_COLUMNS)?;
    for r in rows {
        w.write_record([r.iteration.to_string(), fmt_f64(r.loss), fmt_f64(r.mean_reward), fmt_f64(r.epsilon)])?;
    }
    w.flush().map_err(|e| Error::io("loss csv", e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    mode: &'a str,
    seed: u64,
    config_hash: &'a str,
    networks: Vec<String>,
}

fn write_checkpoint(
    dir: &Path,
    strategy: &dyn crate::marl::SamplingStrategy,
    mode: &str,
    seed: u64,
    hash: &str,
) -> Result<()> {
    let nets = strategy.networks();
    if nets.is_empty() {
        return Ok(());
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(nets.len());
    for (name, net) in nets {
        let file = format!("{name}.net");
        net.save(&dir.join(&file))?;
        names.push(file);
    }
    let manifest = Manifest { mode, seed, config_hash: hash, networks: names };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Reads a CSV artifact, checking the hash line and the header.
pub fn read_artifact(path: &Path, columns: &[&str]) -> Result<(String, Vec<csv::StringRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let hash = first
        .strip_prefix("# config_hash=")
        .ok_or_else(|| Error::Contract(format!("{} lacks a config hash line", path.display())))?
        .to_string();
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != columns {
        return Err(Error::Contract(format!("{} has columns {header:?}, expected {columns:?}", path.display())));
    }
    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((hash, rows))
}
