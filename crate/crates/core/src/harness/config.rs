//! Experiment configuration: TOML on disk, defaults for every field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{Nonlinearity, ProcessModel};
use crate::error::{Error, Result};
use crate::marl::{SystemParams, TrainerConfig};
use crate::radio::{calibrated_reference_gain, dbm_to_watts, place_devices};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    Zero,
    Tanh { gain: Vec<Vec<f64>> },
    Cubic { coef: Vec<f64> },
}

/// A process family from the dynamics catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    /// Linear part, row by row.
    pub a: Vec<Vec<f64>>,
    pub nonlinearity: NonlinearitySpec,
    pub disturbance_bound: f64,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

impl DynamicsSpec {
    pub fn to_model(&self, min_frequency_hz: f64) -> Result<ProcessModel> {
        let nonlinearity = match &self.nonlinearity {
            NonlinearitySpec::Zero => Nonlinearity::Zero,
            NonlinearitySpec::Tanh { gain } => Nonlinearity::Tanh { gain: matrix(gain, "tanh gain")? },
            NonlinearitySpec::Cubic { coef } => Nonlinearity::Cubic { coef: DVector::from_vec(coef.clone()) },
        };
        ProcessModel::new(matrix(&self.a, "linear coefficient")?, nonlinearity, self.disturbance_bound, min_frequency_hz)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

fn rotation(scale: f64, angle: f64) -> Vec<Vec<f64>> {
    let (s, c) = angle.sin_cos();
    vec![vec![scale * c, -scale * s], vec![scale * s, scale * c]]
}

fn diag(v: f64) -> Vec<Vec<f64>> {
    vec![vec![v, 0.0], vec![0.0, v]]
}

/// Built-in process families, all two-dimensional.
pub fn builtin_catalog() -> BTreeMap<String, DynamicsSpec> {
    let mut c = BTreeMap::new();
    c.insert(
        "calm".into(),
        DynamicsSpec {
            a: vec![vec![0.9, 0.05], vec![-0.05, 0.9]],
            nonlinearity: NonlinearitySpec::Tanh { gain: diag(0.05) },
            disturbance_bound: 0.5,
        },
    );
    c.insert(
        "volatile".into(),
        DynamicsSpec {
            a: rotation(0.8, 0.6),
            nonlinearity: NonlinearitySpec::Tanh { gain: diag(0.1) },
            disturbance_bound: 20.0,
        },
    );
    c.insert(
        "oscillating".into(),
        DynamicsSpec {
            a: rotation(0.95, 1.5),
            nonlinearity: NonlinearitySpec::Cubic { coef: vec![0.02, 0.02] },
            disturbance_bound: 2.0,
        },
    );
    c.insert(
        "linear".into(),
        DynamicsSpec {
            a: vec![vec![0.9, 0.1], vec![0.0, 0.8]],
            nonlinearity: NonlinearitySpec::Zero,
            disturbance_bound: 1.0,
        },
    );
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub devices: usize,
    pub resource_blocks: usize,
    pub slot_duration_s: f64,
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub sampling_cost_j: f64,
    pub noise_dbm: f64,
    pub min_frequency_hz: f64,
    pub gamma_a: f64,
    pub gamma_e: f64,
    pub device_aoi_cap: f64,
    pub bs_aoi_cap: f64,
    pub payload_bits: u64,
    pub cell_radius_m: f64,
    pub pathloss_exponent: f64,
    /// Median SNR at the cell edge used to calibrate the path gain at 1 m.
    pub edge_snr_db: f64,
    pub expected_delay_samples: usize,
    /// Catalog names assigned to devices cyclically.
    pub dynamics: Vec<String>,
    /// Extra or overriding catalog entries.
    pub catalog: BTreeMap<String, DynamicsSpec>,
    pub mode: String,
    pub modes: Vec<String>,
    pub seeds: Vec<u64>,
    /// Total slots per run, evaluation included.
    pub slots: u64,
    /// Trailing greedy evaluation slots.
    pub eval_slots: u64,
    pub out_dir: PathBuf,
    pub trainer: TrainerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            devices: 20,
            resource_blocks: 10,
            slot_duration_s: 1.0,
            bandwidth_hz: 180e3,
            tx_power_w: 0.5,
            sampling_cost_j: 0.5e-3,
            noise_dbm: -95.0,
            min_frequency_hz: 10.0,
            gamma_a: 0.5,
            gamma_e: 0.5,
            device_aoi_cap: 5.0,
            bs_aoi_cap: 5.0,
            payload_bits: 10,
            cell_radius_m: 100.0,
            pathloss_exponent: 3.0,
            edge_snr_db: 20.0,
            expected_delay_samples: 4096,
            dynamics: vec!["volatile".into(), "calm".into()],
            catalog: BTreeMap::new(),
            mode: "qmix_partial".into(),
            modes: vec!["qmix_partial".into(), "qmix_global".into(), "dqn".into(), "uniform".into()],
            seeds: vec![0],
            slots: 20_000,
            eval_slots: 5_000,
            out_dir: PathBuf::from("out"),
            trainer: TrainerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.devices == 0 || self.resource_blocks == 0 {
            return fail("devices and resource_blocks must be at least 1".into());
        }
        let positive = [
            ("slot_duration_s", self.slot_duration_s),
            ("bandwidth_hz", self.bandwidth_hz),
            ("tx_power_w", self.tx_power_w),
            ("sampling_cost_j", self.sampling_cost_j),
            ("min_frequency_hz", self.min_frequency_hz),
            ("device_aoi_cap", self.device_aoi_cap),
            ("bs_aoi_cap", self.bs_aoi_cap),
            ("cell_radius_m", self.cell_radius_m),
            ("pathloss_exponent", self.pathloss_exponent),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.noise_dbm.is_finite() || !self.edge_snr_db.is_finite() {
            return fail("noise_dbm and edge_snr_db must be finite".into());
        }
        for (name, v) in [("gamma_a", self.gamma_a), ("gamma_e", self.gamma_e)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.gamma_a + self.gamma_e <= 0.0 {
            return fail("gamma_a + gamma_e must be positive".into());
        }
        if self.payload_bits == 0 || self.expected_delay_samples == 0 {
            return fail("payload_bits and expected_delay_samples must be at least 1".into());
        }
        if self.dynamics.is_empty() {
            return fail("dynamics must name at least one catalog entry".into());
        }
        let catalog = self.resolved_catalog();
        for name in &self.dynamics {
            match catalog.get(name) {
                None => return fail(format!("unknown dynamics {name:?}")),
                Some(spec) => {
                    spec.to_model(self.min_frequency_hz)?;
                }
            }
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if self.eval_slots > self.slots {
            return fail("eval_slots cannot exceed slots".into());
        }
        self.trainer.validate()
    }

    pub fn resolved_catalog(&self) -> BTreeMap<String, DynamicsSpec> {
        let mut c = builtin_catalog();
        c.extend(self.catalog.clone());
        c
    }

    /// Lowercase hex SHA-256 of the canonical JSON form, excluding the
    /// output directory so relocated runs keep their identity.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Physical system for one seed: devices placed in the cell and
    /// dynamics assigned round-robin from the catalog.
    pub fn system_params(&self, seed: u64) -> Result<SystemParams> {
        self.validate()?;
        let catalog = self.resolved_catalog();
        let mut models = Vec::with_capacity(self.devices);
        for m in 0..self.devices {
            let name = &self.dynamics[m % self.dynamics.len()];
            models.push(catalog[name].to_model(self.min_frequency_hz)?);
        }
        let initial_states = models.iter().map(|p| DVector::zeros(p.dim())).collect();
        let noise_w = dbm_to_watts(self.noise_dbm);
        let reference_gain = calibrated_reference_gain(
            self.tx_power_w,
            noise_w,
            self.pathloss_exponent,
            self.cell_radius_m,
            10f64.powf(self.edge_snr_db / 10.0),
        );
        let mut placement = rng::stream(seed, &[tag::PLACEMENT]);
        Ok(SystemParams {
            rb_count: self.resource_blocks,
            slot_duration: self.slot_duration_s,
            bandwidth_hz: self.bandwidth_hz,
            tx_power_w: self.tx_power_w,
            noise_w,
            sampling_cost_j: self.sampling_cost_j,
            gamma_a: self.gamma_a,
            gamma_e: self.gamma_e,
            device_aoi_cap: self.device_aoi_cap,
            bs_aoi_cap: self.bs_aoi_cap,
            payload_bits: vec![self.payload_bits; self.devices],
            distances_m: place_devices(&mut placement, self.devices, self.cell_radius_m),
            pathloss_exponent: self.pathloss_exponent,
            reference_gain,
            models,
            initial_states,
            expected_delay_samples: self.expected_delay_samples,
        })
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml_string()?).map_err(|e| Error::io(path, e))
}
