//! Age-of-information recursions, energy accounting and the per-slot cost ledger.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::Sample;
use crate::error::{Error, Result};

/// Device-side AoI after one slot.
///
/// A sample taken `elapsed` seconds after the previous one is fresh (age 0)
/// when it lands inside the sampling interval, otherwise it carries the
/// overshoot. Without a sample the age grows by one slot up to `cap`.
pub fn next_device_aoi(
    prev: f64,
    sampled: bool,
    elapsed: f64,
    max_interval: f64,
    slot_duration: f64,
    cap: f64,
) -> f64 {
    if sampled {
        (elapsed - max_interval).max(0.0)
    } else {
        (prev + slot_duration).min(cap)
    }
}

/// BS-side AoI after one slot. `delay` is required when `selected`.
pub fn next_bs_aoi(
    prev: f64,
    selected: bool,
    device_aoi: f64,
    delay: Option<f64>,
    slot_duration: f64,
    cap: f64,
) -> Result<f64> {
    if selected {
        let l = delay.ok_or_else(|| Error::Contract("selected device without a delay".into()))?;
        Ok(device_aoi + l)
    } else {
        Ok((prev + slot_duration).min(cap))
    }
}

/// Sampling plus transmission energy in joules.
pub fn slot_energy(
    sampled: bool,
    selected: bool,
    delay: Option<f64>,
    sampling_cost_j: f64,
    tx_power_w: f64,
) -> Result<f64> {
    let sampling = if sampled { sampling_cost_j } else { 0.0 };
    let transmit = if selected {
        let l = delay.ok_or_else(|| Error::Contract("selected device without a delay".into()))?;
        tx_power_w * l
    } else {
        0.0
    };
    Ok(sampling + transmit)
}

/// Per-device reward: the negated weighted cost of its own slot outcome.
pub fn reward(bs_aoi: f64, energy_j: f64, gamma_a: f64, gamma_e: f64) -> f64 {
    -(gamma_a * bs_aoi + gamma_e * energy_j)
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub device_aoi: f64,
    pub bs_aoi: f64,
    pub sampling_frequency: f64,
    pub last_sample_action: bool,
    pub last_selection: bool,
    /// Slot of the most recent sample, used for the elapsed-time term.
    pub last_sample_slot: u64,
    pub pending_packet: Option<Sample>,
    pub slot_duration: f64,
    pub device_aoi_cap: f64,
    pub bs_aoi_cap: f64,
    /// Undelivered packets replaced by a newer sample.
    pub overwritten_packets: u64,
}

impl DeviceState {
    pub fn new(slot_duration: f64, device_aoi_cap: f64, bs_aoi_cap: f64) -> Self {
        Self {
            device_aoi: 0.0,
            bs_aoi: 0.0,
            sampling_frequency: 0.0,
            last_sample_action: false,
            last_selection: false,
            last_sample_slot: 0,
            pending_packet: None,
            slot_duration,
            device_aoi_cap,
            bs_aoi_cap,
            overwritten_packets: 0,
        }
    }

    /// Local observation `[device AoI, sampling frequency, last s, last u]`.
    pub fn observation(&self) -> [f64; 4] {
        [
            self.device_aoi,
            self.sampling_frequency,
            f64::from(u8::from(self.last_sample_action)),
            f64::from(u8::from(self.last_selection)),
        ]
    }

    /// Applies the device AoI rule for slot `now` and records a new sample
    /// in the one-deep queue when `sample` is given.
    pub fn update_device_aoi(&mut self, now: u64, sample: Option<Sample>, max_interval: f64) -> f64 {
        let sampled = sample.is_some();
        let elapsed = now.saturating_sub(self.last_sample_slot) as f64 * self.slot_duration;
        self.device_aoi = next_device_aoi(
            self.device_aoi,
            sampled,
            elapsed,
            max_interval,
            self.slot_duration,
            self.device_aoi_cap,
        );
        if let Some(s) = sample {
            self.last_sample_slot = now;
            if self.pending_packet.replace(s).is_some() {
                self.overwritten_packets += 1;
            }
        }
        self.device_aoi
    }

    pub fn update_bs_aoi(&mut self, selected: bool, delay: Option<f64>) -> Result<f64> {
        self.bs_aoi = next_bs_aoi(
            self.bs_aoi,
            selected,
            self.device_aoi,
            delay,
            self.slot_duration,
            self.bs_aoi_cap,
        )?;
        Ok(self.bs_aoi)
    }

    /// Queueing time of the pending packet if it were uploaded at `now`.
    pub fn queue_delay(&self, now: u64) -> Option<f64> {
        self.pending_packet
            .as_ref()
            .map(|p| now.saturating_sub(p.slot) as f64 * self.slot_duration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceRecord {
    pub phi: f64,
    #[serde(rename = "Phi")]
    pub bs_phi: f64,
    pub energy_j: f64,
    /// Present only when a packet was delivered in the slot.
    pub queue_delay_s: Option<f64>,
    pub recon_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub devices: Vec<DeviceRecord>,
}

impl SlotRecord {
    pub fn sum_aoi(&self) -> f64 {
        self.devices.iter().map(|d| d.bs_phi).sum()
    }

    pub fn sum_energy(&self) -> f64 {
        self.devices.iter().map(|d| d.energy_j).sum()
    }
}

/// Aggregate figures over a window of recorded slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowSummary {
    pub slots: usize,
    pub mean_sum_aoi: f64,
    pub mean_sum_energy_j: f64,
    pub mean_weighted_cost: f64,
    pub mean_queue_delay_s: Option<f64>,
    pub mean_recon_err: f64,
    pub delivered_packets: u64,
}

#[derive(Debug, Clone)]
pub struct CostLedger {
    pub gamma_a: f64,
    pub gamma_e: f64,
    pub sampling_cost_j: f64,
    records: Vec<SlotRecord>,
    aoi_total: f64,
    energy_total: f64,
}

impl CostLedger {
    pub fn new(gamma_a: f64, gamma_e: f64, sampling_cost_j: f64) -> Self {
        Self {
            gamma_a,
            gamma_e,
            sampling_cost_j,
            records: Vec::new(),
            aoi_total: 0.0,
            energy_total: 0.0,
        }
    }

    pub fn records(&self) -> &[SlotRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: SlotRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.slot <= last.slot {
                return Err(Error::Contract(format!(
                    "ledger slots must increase: {} after {}",
                    record.slot, last.slot
                )));
            }
        }
        self.aoi_total += record.sum_aoi();
        self.energy_total += record.sum_energy();
        self.records.push(record);
        Ok(())
    }

    /// Running average of the per-slot sum AoI.
    pub fn sum_aoi_running(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.aoi_total / self.records.len() as f64
        }
    }

    /// Running average of the per-slot sum energy.
    pub fn sum_energy_running(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.energy_total / self.records.len() as f64
        }
    }

    pub fn running_objective(&self) -> f64 {
        self.gamma_a * self.sum_aoi_running() + self.gamma_e * self.sum_energy_running()
    }

    fn cost_of(&self, r: &SlotRecord) -> f64 {
        self.gamma_a * r.sum_aoi() + self.gamma_e * r.sum_energy()
    }

    /// Weighted AoI-plus-energy cost recorded for `slot`.
    pub fn weighted_cost(&self, slot: u64) -> Result<f64> {
        let idx = self
            .records
            .binary_search_by_key(&slot, |r| r.slot)
            .map_err(|_| Error::Contract(format!("slot {slot} not recorded")))?;
        Ok(self.cost_of(&self.records[idx]))
    }

    /// Summary over records with `slot >= from_slot`.
    pub fn summarize_from(&self, from_slot: u64) -> WindowSummary {
        let start = self.records.partition_point(|r| r.slot < from_slot);
        let window = &self.records[start..];
        let n = window.len();
        let mut aoi = 0.0;
        let mut energy = 0.0;
        let mut cost = 0.0;
        let mut recon = 0.0;
        let mut queue = 0.0;
        let mut delivered = 0u64;
        let mut cells = 0usize;
        for r in window {
            aoi += r.sum_aoi();
            energy += r.sum_energy();
            cost += self.cost_of(r);
            for d in &r.devices {
                recon += d.recon_err;
                cells += 1;
                if let Some(q) = d.queue_delay_s {
                    queue += q;
                    delivered += 1;
                }
            }
        }
        let mean = |x: f64, k: usize| if k == 0 { 0.0 } else { x / k as f64 };
        WindowSummary {
            slots: n,
            mean_sum_aoi: mean(aoi, n),
            mean_sum_energy_j: mean(energy, n),
            mean_weighted_cost: mean(cost, n),
            mean_queue_delay_s: (delivered > 0).then(|| queue / delivered as f64),
            mean_recon_err: mean(recon, cells),
            delivered_packets: delivered,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LEDGER_COLUMNS)?;
        for r in &self.records {
            for (m, d) in r.devices.iter().enumerate() {
                w.write_record([
                    r.slot.to_string(),
                    m.to_string(),
                    fmt_f64(d.phi),
                    fmt_f64(d.bs_phi),
                    fmt_f64(d.energy_j),
                    d.queue_delay_s.map(fmt_f64).unwrap_or_default(),
                    fmt_f64(d.recon_err),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("ledger csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub const LEDGER_COLUMNS: [&str; 7] = [
    "slot",
    "device",
    "phi",
    "Phi",
    "energy_j",
    "queue_delay_s",
    "recon_err",
];

/// Shortest round-trip representation, so parsed values are bit-identical.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
