//! The slot loop: process evolution, sampling, selection, transmission,
//! accounting and learning.

use nalgebra::DVector;

use crate::dynamics::{eigenvalues, Estimator, FrequencyAnalysis, PhysicalProcess, ProcessModel};
use crate::error::{Error, Result};
use crate::metrics::{self, CostLedger, DeviceRecord, DeviceState, SlotRecord, WindowSummary};
use crate::radio::RadioModel;
use crate::rng::{self, tag, StreamRng};
use crate::selector::{self, CostWeights, DeviceInputs, SelectionProblem};

use super::{Observation, SamplingStrategy, StepContext, TrainerConfig, Transition};

/// Fully resolved physical and radio parameters for one system instance.
#[derive(Debug, Clone)]
pub struct SystemParams {
    pub rb_count: usize,
    pub slot_duration: f64,
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub noise_w: f64,
    pub sampling_cost_j: f64,
    pub gamma_a: f64,
    pub gamma_e: f64,
    pub device_aoi_cap: f64,
    pub bs_aoi_cap: f64,
    pub payload_bits: Vec<u64>,
    pub distances_m: Vec<f64>,
    pub pathloss_exponent: f64,
    pub reference_gain: f64,
    pub models: Vec<ProcessModel>,
    pub initial_states: Vec<DVector<f64>>,
    pub expected_delay_samples: usize,
}

impl SystemParams {
    pub fn devices(&self) -> usize {
        self.models.len()
    }

    fn weights(&self) -> CostWeights {
        CostWeights {
            gamma_a: self.gamma_a,
            gamma_e: self.gamma_e,
            tx_power_w: self.tx_power_w,
            sampling_cost_j: self.sampling_cost_j,
            slot_duration: self.slot_duration,
        }
    }
}

/// Mutable simulation state: processes, device and BS views, the radio.
pub struct System {
    params: SystemParams,
    processes: Vec<PhysicalProcess>,
    device_views: Vec<Estimator>,
    bs_views: Vec<Estimator>,
    devices: Vec<DeviceState>,
    radio: RadioModel,
    slot: u64,
    seed: u64,
}

impl System {
    pub fn new(params: SystemParams, seed: u64) -> Result<Self> {
        let m = params.devices();
        if m == 0 {
            return Err(Error::Config("at least one device is required".into()));
        }
        if params.initial_states.len() != m {
            return Err(Error::DimensionMismatch {
                context: "initial states",
                expected: m,
                actual: params.initial_states.len(),
            });
        }
        if params.expected_delay_samples == 0 {
            return Err(Error::Config("expected-delay sample count must be >= 1".into()));
        }
        let radio = RadioModel::new(
            params.bandwidth_hz,
            params.tx_power_w,
            params.noise_w,
            params.rb_count,
            params.payload_bits.clone(),
            params.distances_m.clone(),
            params.pathloss_exponent,
            params.reference_gain,
            params.slot_duration,
            seed,
        )?;
        let mut processes = Vec::with_capacity(m);
        let mut device_views = Vec::with_capacity(m);
        for (i, (model, x0)) in params.models.iter().zip(&params.initial_states).enumerate() {
            let mut p = PhysicalProcess::new(i, model.clone(), x0.clone())?;
            device_views.push(Estimator::new(p.take_sample().clone()));
            processes.push(p);
        }
        let bs_views = device_views.clone();
        let devices = (0..m)
            .map(|_| DeviceState::new(params.slot_duration, params.device_aoi_cap, params.bs_aoi_cap))
            .collect();
        Ok(Self {
            params,
            processes,
            device_views,
            bs_views,
            devices,
            radio,
            slot: 0,
            seed,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn device_count(&self) -> usize {
        self.processes.len()
    }

    pub fn device_states(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn radio(&self) -> &RadioModel {
        &self.radio
    }

    pub fn processes(&self) -> &[PhysicalProcess] {
        &self.processes
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    /// Total slots, training followed by evaluation.
    pub slots: u64,
    /// Trailing greedy slots with learning frozen.
    pub eval_slots: u64,
    pub trainer: TrainerConfig,
}

impl EpisodeOptions {
    pub fn training_slots(&self) -> u64 {
        self.slots.saturating_sub(self.eval_slots)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iteration: u64,
    pub loss: f64,
    /// Mean per-slot sum of device rewards since the previous row.
    pub mean_reward: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub ledger: CostLedger,
    pub losses: Vec<LossRow>,
    pub training_slots: u64,
    pub truncated_delays: u64,
    pub overwritten_packets: u64,
    pub skipped_updates: u64,
    /// Device-slots in which a selected device received the mixed value.
    pub feedback_deliveries: u64,
    pub selections_per_slot_max: usize,
    /// Samples taken during the evaluation window.
    pub eval_samples: u64,
}

impl EpisodeOutput {
    /// Summary over the evaluation window (all slots when there is none).
    pub fn evaluation(&self) -> WindowSummary {
        self.ledger.summarize_from(self.training_slots + 1)
    }
}

struct PendingStep {
    observations: Vec<Observation>,
    actions: Vec<bool>,
    rewards: Vec<f64>,
    selected: Vec<bool>,
}

/// Runs `opts.slots` slots of `strategy` on `system`.
pub fn run_episode(
    system: &mut System,
    strategy: &mut dyn SamplingStrategy,
    opts: &EpisodeOptions,
) -> Result<EpisodeOutput> {
    let m = system.device_count();
    let seed = system.seed;
    let training_slots = opts.training_slots();
    let weights = system.params.weights();
    let mut ledger = CostLedger::new(weights.gamma_a, weights.gamma_e, weights.sampling_cost_j);
    let mut disturbance: Vec<StreamRng> = (0..m as u64)
        .map(|d| rng::stream(seed, &[tag::DISTURBANCE, d]))
        .collect();
    let mut fading = rng::stream(seed, &[tag::FADING]);
    let mut explore = rng::stream(seed, &[tag::EXPLORATION]);
    let mut replay = rng::stream(seed, &[tag::REPLAY]);
    let interval_cap = system.params.device_aoi_cap;
    let mut losses = Vec::new();
    let mut pending: Option<PendingStep> = None;
    let mut reward_sum = 0.0;
    let mut reward_slots = 0u64;
    let mut feedback_deliveries = 0;
    let mut max_selected = 0;
    let mut eval_samples = 0;

    for _ in 0..opts.slots {
        let t = system.slot + 1;
        let training = t <= training_slots;

        // process evolution and each device's view of how fast it varies
        for d in 0..m {
            system.processes[d]
                .step(&mut disturbance[d])
                .map_err(|e| e.at_slot(d, t, "process step"))?;
        }
        let mut intervals = vec![0.0; m];
        for d in 0..m {
            let fa = frequency_analysis(system, d, t, interval_cap).map_err(|e| e.at_slot(d, t, "frequency analysis"))?;
            system.devices[d].sampling_frequency = fa.sampling_frequency;
            intervals[d] = fa.max_sampling_interval;
        }
        let observations: Vec<Observation> = system.devices.iter().map(DeviceState::observation).collect();

        if let Some(p) = pending.take() {
            strategy.record(Transition {
                observations: p.observations,
                actions: p.actions,
                rewards: p.rewards,
                selected: p.selected,
                next_observations: observations.clone(),
            });
        }

        let epsilon = if training {
            opts.trainer.epsilon_at(t - 1, training_slots)
        } else {
            1.0
        };
        let ctx = StepContext { slot: t, observations: &observations, exploit_prob: epsilon };
        let actions = strategy.act(&ctx, &mut explore)?;
        if actions.len() != m {
            return Err(Error::DimensionMismatch { context: "sampling actions", expected: m, actual: actions.len() });
        }

        if !training {
            eval_samples += actions.iter().filter(|&&s| s).count() as u64;
        }
        let prev_bs_aoi: Vec<f64> = system.devices.iter().map(|s| s.bs_aoi).collect();
        for d in 0..m {
            let sample = actions[d].then(|| {
                let s = system.processes[d].take_sample().clone();
                system.device_views[d].reset(s.clone());
                s
            });
            system.devices[d].update_device_aoi(t, sample, intervals[d]);
        }

        // requests, selection and uplink
        system.radio.draw_fading(&mut fading);
        let mut problem = SelectionProblem {
            c1: vec![0.0; m],
            c2: vec![0.0; m],
            rb_budget: system.params.rb_count,
            has_packet: system.devices.iter().map(|s| s.pending_packet.is_some()).collect(),
        };
        for d in 0..m {
            let expected_delay = if problem.has_packet[d] {
                system
                    .radio
                    .expected_delay(d, t, system.params.expected_delay_samples)
                    .map_err(|e| e.at_slot(d, t, "expected delay"))?
            } else {
                0.0
            };
            let (c1, c2) = selector::coefficients(
                &DeviceInputs {
                    device_aoi: system.devices[d].device_aoi,
                    prev_bs_aoi: prev_bs_aoi[d],
                    sampled: actions[d],
                    expected_delay,
                },
                &weights,
            );
            problem.c1[d] = c1;
            problem.c2[d] = c2;
        }
        let selected = selector::select(&problem).map_err(|e| e.at_slot(0, t, "selection"))?;
        max_selected = max_selected.max(selected.iter().filter(|&&u| u).count());

        let mut records = Vec::with_capacity(m);
        let mut rewards = Vec::with_capacity(m);
        for d in 0..m {
            let delay = system.radio.delay(d, selected[d]).seconds();
            let mut queue_delay = None;
            if selected[d] {
                queue_delay = system.devices[d].queue_delay(t);
                let packet = system.devices[d]
                    .pending_packet
                    .take()
                    .ok_or_else(|| Error::Contract("selected device has no packet".into()).at_slot(d, t, "uplink"))?;
                system.bs_views[d].reset(packet);
                feedback_deliveries += 1;
            }
            let bs_aoi = system.devices[d].update_bs_aoi(selected[d], delay).map_err(|e| e.at_slot(d, t, "BS AoI"))?;
            let energy = metrics::slot_energy(actions[d], selected[d], delay, weights.sampling_cost_j, weights.tx_power_w)
                .map_err(|e| e.at_slot(d, t, "energy"))?;
            rewards.push(metrics::reward(bs_aoi, energy, weights.gamma_a, weights.gamma_e));
            let model = &system.processes[d].model;
            let recon = system.bs_views[d]
                .estimate(model, t)
                .map(|x| (x - system.processes[d].true_state()).norm())
                .ok_or(Error::Divergence { device: d, slot: t })?;
            records.push(DeviceRecord {
                phi: system.devices[d].device_aoi,
                bs_phi: bs_aoi,
                energy_j: energy,
                queue_delay_s: queue_delay,
                recon_err: recon,
            });
            system.devices[d].last_sample_action = actions[d];
            system.devices[d].last_selection = selected[d];
        }
        ledger.push(SlotRecord { slot: t, devices: records })?;
        system.slot = t;

        if training {
            reward_sum += rewards.iter().sum::<f64>();
            reward_slots += 1;
            if strategy.learns() {
                pending = Some(PendingStep { observations, actions, rewards, selected });
            }
            if strategy.learns() && t % opts.trainer.train_every == 0 {
                if let Some(loss) = strategy.train(&mut replay)? {
                    losses.push(LossRow {
                        iteration: losses.len() as u64 + 1,
                        loss,
                        mean_reward: reward_sum / reward_slots as f64,
                        epsilon,
                    });
                    reward_sum = 0.0;
                    reward_slots = 0;
                }
            }
        }
    }

    Ok(EpisodeOutput {
        ledger,
        losses,
        training_slots,
        truncated_delays: system.radio.truncations(),
        overwritten_packets: system.devices.iter().map(|s| s.overwritten_packets).sum(),
        skipped_updates: strategy.skipped_updates(),
        feedback_deliveries,
        selections_per_slot_max: max_selected,
        eval_samples,
    })
}

fn frequency_analysis(system: &mut System, d: usize, t: u64, interval_cap: f64) -> Result<FrequencyAnalysis> {
    let model = &system.processes[d].model;
    let estimate = system.device_views[d]
        .estimate(model, t)
        .ok_or(Error::Divergence { device: d, slot: t })?
        .clone();
    let error = (&estimate - system.processes[d].true_state()).norm();
    let eig = eigenvalues(&model.jacobian(&estimate))?;
    Ok(FrequencyAnalysis::new(
        eig,
        error,
        model.disturbance_bound,
        model.min_frequency_hz,
        interval_cap,
    ))
}
