#![allow(dead_code)]

use aoi_core::harness::{DynamicsSpec, ExperimentConfig, NonlinearitySpec};
use aoi_core::marl::TrainerConfig;

/// A small but complete configuration that trains in well under a second.
pub fn tiny(devices: usize, rbs: usize) -> ExperimentConfig {
    ExperimentConfig {
        devices,
        resource_blocks: rbs,
        slots: 400,
        eval_slots: 100,
        expected_delay_samples: 64,
        trainer: TrainerConfig {
            replay_capacity: 256,
            batch_size: 16,
            target_sync: 20,
            hidden: 16,
            mixer_hidden: 8,
            ..TrainerConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

/// One-dimensional process pinned at zero: no drift, no disturbance.
pub fn still_process() -> DynamicsSpec {
    DynamicsSpec { a: vec![vec![0.0]], nonlinearity: NonlinearitySpec::Zero, disturbance_bound: 0.0 }
}

pub const ALL_MODES: [&str; 5] = ["qmix_partial", "qmix_global", "vdn", "dqn", "uniform"];
