//! Multi-agent sampling policies and the slot-level simulation loop.
//!
//! Every policy implements [`SamplingStrategy`] and is built by name through
//! a [`StrategyRegistry`], so the episode runner and CLI never special-case
//! a mode.

mod dqn;
mod episode;
mod mixer;
mod qmix;
pub mod tabular;
mod uniform;

pub use dqn::DqnStrategy;
pub use episode::{run_episode, EpisodeOptions, EpisodeOutput, LossRow, System, SystemParams};
pub use mixer::{combine, MixMode, MixTrace, MixingNetwork};
pub use qmix::QmixStrategy;
pub use tabular::TabularMdp;
pub use uniform::UniformStrategy;

pub use crate::metrics::reward;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Activation, DenseNet, OptimizerKind};
use crate::rng::StreamRng;

/// Length of a device's local observation.
pub const OBS_LEN: usize = 4;

pub type Observation = [f64; OBS_LEN];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub discount: f64,
    pub learning_rate: f64,
    pub mixer_learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Train steps between hard target-network syncs.
    pub target_sync: u64,
    /// Slots between train steps.
    pub train_every: u64,
    pub hidden: usize,
    pub mixer_hidden: usize,
    /// Exploitation probability at the start of training.
    pub epsilon_start: f64,
    /// Exploitation probability once annealing ends.
    pub epsilon_end: f64,
    /// Fraction of the training slots over which the anneal runs.
    pub anneal_fraction: f64,
    /// Global gradient-norm ceiling per train step; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            learning_rate: 1e-3,
            mixer_learning_rate: 1e-3,
            optimizer: OptimizerKind::Sgd,
            replay_capacity: 10_000,
            batch_size: 64,
            target_sync: 200,
            train_every: 2,
            hidden: 64,
            mixer_hidden: 32,
            epsilon_start: 0.05,
            epsilon_end: 0.95,
            anneal_fraction: 0.5,
            grad_clip: 10.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        for (name, eps) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return bad("anneal_fraction must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.mixer_learning_rate >= 0.0) {
            return bad("learning rates must be nonnegative");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be nonnegative");
        }
        if let OptimizerKind::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return bad("momentum beta must lie in [0, 1)");
            }
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad("need 0 < batch_size <= replay_capacity");
        }
        if self.target_sync == 0 || self.train_every == 0 || self.hidden == 0 || self.mixer_hidden == 0 {
            return bad("target_sync, train_every and layer widths must be positive");
        }
        Ok(())
    }

    /// Exploitation probability at `slot` of a `training_slots`-long phase.
    pub fn epsilon_at(&self, slot: u64, training_slots: u64) -> f64 {
        let span = (self.anneal_fraction * training_slots as f64).floor();
        if span <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (slot as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    /// `4 -> hidden relu -> hidden relu -> 2`.
    pub fn device_net(&self) -> Result<DenseNet> {
        DenseNet::new(
            OBS_LEN,
            &[
                (self.hidden, Activation::Relu),
                (self.hidden, Activation::Relu),
                (2, Activation::Identity),
            ],
        )
    }
}

/// Greedy action over `[Q(o, 0), Q(o, 1)]`; ties choose not to sample.
pub fn greedy(q: &[f64]) -> bool {
    q[1] > q[0]
}

/// With probability `exploit` the greedy action, otherwise a fair coin.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], exploit: f64, rng: &mut R) -> bool {
    if rng.random::<f64>() < exploit {
        greedy(q)
    } else {
        rng.random()
    }
}

/// One slot of joint experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observations: Vec<Observation>,
    pub actions: Vec<bool>,
    /// Per-device rewards for every device, selected or not.
    pub rewards: Vec<f64>,
    pub selected: Vec<bool>,
    pub next_observations: Vec<Observation>,
}

pub fn flatten(obs: &[Observation]) -> Vec<f64> {
    obs.iter().flatten().copied().collect()
}

#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub slot: u64,
    pub observations: &'a [Observation],
    pub exploit_prob: f64,
}

/// A per-slot sampling policy, optionally learning from experience.
pub trait SamplingStrategy {
    fn name(&self) -> &str;

    /// Sampling decision for every device.
    fn act(&mut self, ctx: &StepContext<'_>, rng: &mut StreamRng) -> Result<Vec<bool>>;

    fn record(&mut self, transition: Transition);

    /// One optimisation step; `None` when no step was taken.
    fn train(&mut self, rng: &mut StreamRng) -> Result<Option<f64>>;

    /// Named networks for checkpointing.
    fn networks(&self) -> Vec<(String, &DenseNet)> {
        Vec::new()
    }

    /// Updates dropped for non-finite losses or gradients.
    fn skipped_updates(&self) -> u64 {
        0
    }

    fn learns(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct StrategySetup {
    pub devices: usize,
    pub rb_count: usize,
    pub trainer: TrainerConfig,
    pub seed: u64,
}

pub type StrategyBuilder = fn(&StrategySetup) -> Result<Box<dyn SamplingStrategy>>;

/// Name-to-constructor table for sampling strategies.
#[derive(Clone, Default)]
pub struct StrategyRegistry {
    entries: BTreeMap<String, StrategyBuilder>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding every built-in strategy.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register("qmix_partial", |s| Ok(Box::new(QmixStrategy::new(s, MixMode::Partial)?)));
        r.register("qmix_global", |s| Ok(Box::new(QmixStrategy::new(s, MixMode::Global)?)));
        r.register("vdn", |s| Ok(Box::new(QmixStrategy::new(s, MixMode::Vdn)?)));
        r.register("dqn", |s| Ok(Box::new(DqnStrategy::new(s)?)));
        r.register("uniform", |s| Ok(Box::new(UniformStrategy::new(s.devices, s.rb_count))));
        r
    }

    pub fn register(&mut self, name: &str, builder: StrategyBuilder) {
        self.entries.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn build(&self, name: &str, setup: &StrategySetup) -> Result<Box<dyn SamplingStrategy>> {
        let builder = self.entries.get(name).ok_or_else(|| {
            Error::Config(format!("unknown mode {name:?}; expected one of {:?}", self.names()))
        })?;
        setup.trainer.validate()?;
        builder(setup)
    }
}
