//! OFDMA uplink: Rayleigh-faded gains, per-RB rate and transmission delay.

use std::collections::HashMap;
use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Path gain at 1 m such that the median SNR at `edge_m` equals
/// `target_snr` under unit-mean exponential fading.
pub fn calibrated_reference_gain(
    tx_power_w: f64,
    noise_w: f64,
    pathloss_exponent: f64,
    edge_m: f64,
    target_snr: f64,
) -> f64 {
    target_snr * noise_w * edge_m.powf(pathloss_exponent) / (tx_power_w * LN_2)
}

/// Uniform placement in a disc, returning distances to the centre.
/// Distances are floored at 1 m to keep the far-field model meaningful.
pub fn place_devices<R: Rng + ?Sized>(rng: &mut R, count: usize, radius_m: f64) -> Vec<f64> {
    (0..count)
        .map(|_| (radius_m * rng.random::<f64>().sqrt()).max(1.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delay {
    NotApplicable,
    Seconds { value: f64, truncated: bool },
}

impl Delay {
    pub fn seconds(self) -> Option<f64> {
        match self {
            Delay::NotApplicable => None,
            Delay::Seconds { value, .. } => Some(value),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadioModel {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub noise_w: f64,
    pub rb_count: usize,
    pub payload_bits: Vec<u64>,
    pub device_distance_m: Vec<f64>,
    pub pathloss_exponent: f64,
    pub reference_gain: f64,
    /// Delays longer than this are truncated.
    pub slot_duration_s: f64,
    /// Seed for the Monte-Carlo streams behind [`RadioModel::expected_delay`].
    pub seed: u64,
    fading: Vec<f64>,
    truncations: u64,
    cache_slot: Option<u64>,
    cache: HashMap<usize, f64>,
}

impl RadioModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bandwidth_hz: f64,
        tx_power_w: f64,
        noise_w: f64,
        rb_count: usize,
        payload_bits: Vec<u64>,
        device_distance_m: Vec<f64>,
        pathloss_exponent: f64,
        reference_gain: f64,
        slot_duration_s: f64,
        seed: u64,
    ) -> Result<Self> {
        let positive = [
            ("bandwidth", bandwidth_hz),
            ("transmit power", tx_power_w),
            ("noise power", noise_w),
            ("path-loss exponent", pathloss_exponent),
            ("reference gain", reference_gain),
            ("slot duration", slot_duration_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if rb_count == 0 {
            return Err(Error::Config("resource block count must be at least 1".into()));
        }
        if payload_bits.len() != device_distance_m.len() {
            return Err(Error::DimensionMismatch {
                context: "payload sizes vs device distances",
                expected: device_distance_m.len(),
                actual: payload_bits.len(),
            });
        }
        if payload_bits.iter().any(|&z| z == 0) {
            return Err(Error::Config("payload size must be at least 1 bit".into()));
        }
        if device_distance_m.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Config("device distances must be positive".into()));
        }
        let m = payload_bits.len();
        Ok(Self {
            bandwidth_hz,
            tx_power_w,
            noise_w,
            rb_count,
            payload_bits,
            device_distance_m,
            pathloss_exponent,
            reference_gain,
            slot_duration_s,
            seed,
            fading: vec![1.0; m],
            truncations: 0,
            cache_slot: None,
            cache: HashMap::new(),
        })
    }

    pub fn devices(&self) -> usize {
        self.payload_bits.len()
    }

    pub fn fading(&self) -> &[f64] {
        &self.fading
    }

    /// Number of delays clipped at the slot duration so far.
    pub fn truncations(&self) -> u64 {
        self.truncations
    }

    pub fn path_gain(&self, device: usize) -> f64 {
        self.reference_gain * self.device_distance_m[device].powf(-self.pathloss_exponent)
    }

    pub fn channel_gain(&self, device: usize) -> f64 {
        self.path_gain(device) * self.fading[device]
    }

    /// Draws a fresh unit-mean exponential fading power per device.
    pub fn draw_fading<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for g in &mut self.fading {
            *g = draw_unit_exponential(rng);
        }
    }

    /// Overrides the fading state, for tests and replay.
    pub fn set_fading(&mut self, fading: Vec<f64>) -> Result<()> {
        if fading.len() != self.devices() {
            return Err(Error::DimensionMismatch {
                context: "fading state",
                expected: self.devices(),
                actual: fading.len(),
            });
        }
        if fading.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Config("fading powers must be positive".into()));
        }
        self.fading = fading;
        Ok(())
    }

    pub fn rate_for_gain(&self, gain: f64) -> f64 {
        let snr = self.tx_power_w * gain / self.noise_w;
        self.bandwidth_hz * snr.ln_1p() / LN_2
    }

    /// bits/s on one resource block.
    pub fn rate(&self, device: usize, selected: bool) -> f64 {
        if !selected {
            return 0.0;
        }
        self.rate_for_gain(self.channel_gain(device))
    }

    fn truncated_delay(&self, device: usize, rate: f64) -> (f64, bool) {
        let raw = self.payload_bits[device] as f64 / rate;
        if raw.is_finite() && raw <= self.slot_duration_s {
            (raw, false)
        } else {
            (self.slot_duration_s, true)
        }
    }

    /// Transmission delay under the current fading state.
    pub fn delay(&mut self, device: usize, selected: bool) -> Delay {
        if !selected {
            return Delay::NotApplicable;
        }
        let (value, truncated) = self.truncated_delay(device, self.rate(device, true));
        if truncated {
            self.truncations += 1;
        }
        Delay::Seconds { value, truncated }
    }

    /// Monte-Carlo mean delay over fresh fading draws, cached per slot.
    pub fn expected_delay(&mut self, device: usize, slot: u64, mc_samples: usize) -> Result<f64> {
        if mc_samples == 0 {
            return Err(Error::Config("expected-delay sample count must be >= 1".into()));
        }
        if self.cache_slot != Some(slot) {
            self.cache.clear();
            self.cache_slot = Some(slot);
        }
        if let Some(&v) = self.cache.get(&device) {
            return Ok(v);
        }
        let mut stream = rng::stream(self.seed, &[tag::EXPECTED_DELAY, slot, device as u64]);
        let path = self.path_gain(device);
        let mut total = 0.0;
        for _ in 0..mc_samples {
            let g = draw_unit_exponential(&mut stream);
            total += self.truncated_delay(device, self.rate_for_gain(path * g)).0;
        }
        let mean = total / mc_samples as f64;
        self.cache.insert(device, mean);
        Ok(mean)
    }
}

fn draw_unit_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let g: f64 = Exp1.sample(rng);
        if g > 0.0 {
            return g;
        }
    }
}
