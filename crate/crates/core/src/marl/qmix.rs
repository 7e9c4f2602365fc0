use crate::error::Result;
use crate::neural::{clip_global_norm, DenseNet, Optimizer, ReplayBuffer, Trace};
use crate::rng::{self, tag, StreamRng};

use super::mixer::{combine, MixMode, MixTrace, MixingNetwork};
use super::{epsilon_greedy, flatten, SamplingStrategy, StepContext, StrategySetup, TrainerConfig, Transition, OBS_LEN};

/// Per-device Q-networks trained jointly through a mixing network.
pub struct QmixStrategy {
    name: &'static str,
    mode: MixMode,
    cfg: TrainerConfig,
    agents: Vec<DenseNet>,
    targets: Vec<DenseNet>,
    optimizers: Vec<Optimizer>,
    mixer: MixingNetwork,
    target_mixer: MixingNetwork,
    opt_w: Optimizer,
    opt_b: Optimizer,
    buffer: ReplayBuffer<Transition>,
    train_steps: u64,
    skipped: u64,
}

impl QmixStrategy {
    pub fn new(setup: &StrategySetup, mode: MixMode) -> Result<Self> {
        let cfg = setup.trainer.clone();
        let m = setup.devices;
        let mut init = rng::stream(setup.seed, &[tag::INIT]);
        let mut agents = Vec::with_capacity(m);
        for _ in 0..m {
            let mut net = cfg.device_net()?;
            net.init(&mut init);
            agents.push(net);
        }
        let mut mixer = MixingNetwork::new(m, OBS_LEN * m, cfg.mixer_hidden, mode)?;
        mixer.init(&mut init);
        let optimizers = agents
            .iter()
            .map(|a| Optimizer::new(cfg.learning_rate, cfg.optimizer, a.param_count()))
            .collect();
        let opt_w = Optimizer::new(cfg.mixer_learning_rate, cfg.optimizer, mixer.hyper_w().param_count());
        let opt_b = Optimizer::new(cfg.mixer_learning_rate, cfg.optimizer, mixer.hyper_b().param_count());
        Ok(Self {
            name: match mode {
                MixMode::Partial => "qmix_partial",
                MixMode::Global => "qmix_global",
                MixMode::Vdn => "vdn",
            },
            mode,
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            targets: agents.clone(),
            target_mixer: mixer.clone(),
            agents,
            optimizers,
            mixer,
            opt_w,
            opt_b,
            cfg,
            train_steps: 0,
            skipped: 0,
        })
    }

    pub fn mode(&self) -> MixMode {
        self.mode
    }

    pub fn agents(&self) -> &[DenseNet] {
        &self.agents
    }

    pub fn mixer(&self) -> &MixingNetwork {
        &self.mixer
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Bootstrapped target `R + discount * max_a' Q_tot(o', a')`.
    ///
    /// Monotone mixing lets the joint maximum split into per-device maxima.
    pub fn td_target(&self, t: &Transition) -> Result<f64> {
        let mask = self.mode.mask(&t.selected);
        let reward: f64 = t.rewards.iter().zip(&mask).filter(|(_, &on)| on).map(|(r, _)| r).sum();
        if self.cfg.discount == 0.0 {
            return Ok(reward);
        }
        let mut best = Vec::with_capacity(t.next_observations.len());
        for (net, o) in self.targets.iter().zip(&t.next_observations) {
            let q = net.forward(o)?;
            best.push(q[0].max(q[1]));
        }
        let (w, b) = self.target_mixer.weights(&flatten(&t.next_observations))?;
        Ok(reward + self.cfg.discount * combine(&w, &b, &best, &mask)?)
    }

    /// One gradient step on a given batch; returns the mean squared TD error.
    pub fn train_on(&mut self, batch: &[&Transition]) -> Result<Option<f64>> {
        let m = self.agents.len();
        let n = batch.len() as f64;
        let mut grads: Vec<Vec<f64>> = self.agents.iter().map(|a| vec![0.0; a.param_count()]).collect();
        let mut grad_w = vec![0.0; self.mixer.hyper_w().param_count()];
        let mut grad_b = vec![0.0; self.mixer.hyper_b().param_count()];
        let mut touched = vec![false; m];
        let mut traces = vec![Trace::default(); m];
        let mut mix_trace = MixTrace::default();
        let mut q = vec![0.0; m];
        let mut loss = 0.0;
        for t in batch {
            let target = self.td_target(t)?;
            let mask = self.mode.mask(&t.selected);
            for d in 0..m {
                self.agents[d].forward_trace(&t.observations[d], &mut traces[d])?;
                q[d] = traces[d].output()[usize::from(t.actions[d])];
            }
            self.mixer.trace(&flatten(&t.observations), &mut mix_trace)?;
            let q_tot = combine(&mix_trace.weights, &mix_trace.biases, &q, &mask)?;
            let err = q_tot - target;
            loss += err * err / n;
            let upstream = 2.0 * err / n;
            for d in (0..m).filter(|&d| mask[d]) {
                let mut head = [0.0; 2];
                head[usize::from(t.actions[d])] = upstream * mix_trace.weights[d];
                self.agents[d].backward(&traces[d], &head, &mut grads[d])?;
                touched[d] = true;
            }
            self.mixer.backward(&mix_trace, &q, &mask, upstream, &mut grad_w, &mut grad_b)?;
        }
        if !loss.is_finite() {
            self.skipped += 1;
            return Ok(None);
        }
        {
            let mut blocks: Vec<&mut [f64]> = grads.iter_mut().map(Vec::as_mut_slice).collect();
            blocks.push(&mut grad_w);
            blocks.push(&mut grad_b);
            clip_global_norm(&mut blocks, self.cfg.grad_clip);
        }
        // devices outside every mask in the batch get no update at all
        for d in (0..m).filter(|&d| touched[d]) {
            if !self.optimizers[d].step(&mut self.agents[d], &grads[d])? {
                self.skipped += 1;
            }
        }
        if self.mode != MixMode::Vdn && touched.iter().any(|&x| x) {
            let ok_w = self.opt_w.step(self.mixer.hyper_w_mut(), &grad_w)?;
            let ok_b = self.opt_b.step(self.mixer.hyper_b_mut(), &grad_b)?;
            self.skipped += u64::from(!ok_w) + u64::from(!ok_b);
        }
        self.train_steps += 1;
        if self.train_steps % self.cfg.target_sync == 0 {
            self.sync_targets()?;
        }
        Ok(Some(loss))
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        for (t, a) in self.targets.iter_mut().zip(&self.agents) {
            t.copy_params_from(a)?;
        }
        self.target_mixer.copy_from(&self.mixer)
    }
}

impl SamplingStrategy for QmixStrategy {
    fn name(&self) -> &str {
        self.name
    }

    fn act(&mut self, ctx: &StepContext<'_>, rng: &mut StreamRng) -> Result<Vec<bool>> {
        self.agents
            .iter()
            .zip(ctx.observations)
            .map(|(net, o)| Ok(epsilon_greedy(&net.forward(o)?, ctx.exploit_prob, rng)))
            .collect()
    }

    fn record(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    fn train(&mut self, rng: &mut StreamRng) -> Result<Option<f64>> {
        let Some(batch) = self.buffer.sample(self.cfg.batch_size, rng) else {
            return Ok(None);
        };
        let batch: Vec<Transition> = batch.into_iter().cloned().collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        self.train_on(&refs)
    }

    fn networks(&self) -> Vec<(String, &DenseNet)> {
        let mut out: Vec<(String, &DenseNet)> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| (format!("device_{i}"), a))
            .collect();
        if self.mode != MixMode::Vdn {
            out.push(("hyper_w".into(), self.mixer.hyper_w()));
            out.push(("hyper_b".into(), self.mixer.hyper_b()));
        }
        out
    }

    fn skipped_updates(&self) -> u64 {
        self.skipped
            + self.optimizers.iter().map(Optimizer::skipped).sum::<u64>()
            + self.opt_w.skipped()
            + self.opt_b.skipped()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, OptimizerKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(m: usize, discount: f64) -> StrategySetup {
        StrategySetup {
            devices: m,
            rb_count: 1,
            trainer: TrainerConfig { discount, hidden: 8, mixer_hidden: 6, batch_size: 4, ..TrainerConfig::default() },
            seed: 3,
        }
    }

    fn random_transition(rng: &mut ChaCha8Rng, m: usize) -> Transition {
        let obs = |rng: &mut ChaCha8Rng| -> Vec<[f64; 4]> {
            (0..m)
                .map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..2.0), 1.0, 0.0])
                .collect()
        };
        Transition {
            observations: obs(rng),
            actions: (0..m).map(|_| rng.random()).collect(),
            rewards: (0..m).map(|_| -rng.random_range(0.0..3.0)).collect(),
            selected: (0..m).map(|_| rng.random()).collect(),
            next_observations: obs(rng),
        }
    }

    #[test]
    fn zero_discount_target_is_masked_reward() {
        let s = QmixStrategy::new(&setup(3, 0.0), MixMode::Partial).unwrap();
        let t = Transition {
            observations: vec![[0.0; 4]; 3],
            actions: vec![true; 3],
            rewards: vec![-1.0, -2.0, -4.0],
            selected: vec![true, false, true],
            next_observations: vec![[0.0; 4]; 3],
        };
        assert_eq!(s.td_target(&t).unwrap(), -5.0);
        let g = QmixStrategy::new(&setup(3, 0.0), MixMode::Global).unwrap();
        assert_eq!(g.td_target(&t).unwrap(), -7.0);
    }

    #[test]
    fn single_device_vdn_is_plain_dqn_target() {
        let s = QmixStrategy::new(&setup(1, 0.9), MixMode::Vdn).unwrap();
        let t = Transition {
            observations: vec![[1.0, 0.5, 1.0, 1.0]],
            actions: vec![true],
            rewards: vec![-0.7],
            selected: vec![true],
            next_observations: vec![[2.0, 0.1, 0.0, 1.0]],
        };
        let q = s.targets[0].forward(&t.next_observations[0]).unwrap();
        assert_eq!(s.td_target(&t).unwrap(), -0.7 + 0.9 * q[0].max(q[1]));
    }

    #[test]
    fn decomposed_max_equals_joint_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = QmixStrategy::new(&setup(2, 0.9), MixMode::Global).unwrap();
            let t = random_transition(&mut rng, 2);
            let (w, b) = s.target_mixer.weights(&flatten(&t.next_observations)).unwrap();
            let q0 = s.targets[0].forward(&t.next_observations[0]).unwrap();
            let q1 = s.targets[1].forward(&t.next_observations[1]).unwrap();
            let mut joint = f64::NEG_INFINITY;
            for a0 in 0..2 {
                for a1 in 0..2 {
                    joint = joint.max(combine(&w, &b, &[q0[a0], q1[a1]], &[true, true]).unwrap());
                }
            }
            let decomposed = combine(&w, &b, &[q0[0].max(q0[1]), q1[0].max(q1[1])], &[true, true]).unwrap();
            assert!((joint - decomposed).abs() <= 1e-12 * joint.abs().max(1.0));
        }
    }

    #[test]
    fn unselected_device_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = QmixStrategy::new(&setup(3, 0.9), MixMode::Partial).unwrap();
        let batch: Vec<Transition> = (0..8)
            .map(|_| {
                let mut t = random_transition(&mut rng, 3);
                t.selected = vec![true, false, true];
                t
            })
            .collect();
        let before = s.agents[1].clone();
        let other = s.agents[0].clone();
        s.train_on(&batch.iter().collect::<Vec<_>>()).unwrap().unwrap();
        assert_eq!(s.agents[1], before);
        assert_ne!(s.agents[0], other);
    }

    #[test]
    fn zero_error_batch_leaves_parameters() {
        let mut s = QmixStrategy::new(&setup(2, 0.0), MixMode::Vdn).unwrap();
        let obs = [[0.5, 0.2, 1.0, 0.0], [1.5, 0.4, 0.0, 1.0]];
        let q0 = s.agents[0].forward(&obs[0]).unwrap()[1];
        let q1 = s.agents[1].forward(&obs[1]).unwrap()[0];
        let t = Transition {
            observations: obs.to_vec(),
            actions: vec![true, false],
            rewards: vec![q0, q1],
            selected: vec![true, true],
            next_observations: obs.to_vec(),
        };
        let before: Vec<_> = s.agents.clone();
        let loss = s.train_on(&[&t]).unwrap().unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(s.agents, before);
    }

    #[test]
    fn one_layer_step_matches_chain_rule() {
        // linear agent, vdn mixing, discount 0: the update is closed form
        let mut s = QmixStrategy::new(&setup(1, 0.0), MixMode::Vdn).unwrap();
        let mut net = DenseNet::new(4, &[(2, Activation::Identity)]).unwrap();
        net.init(&mut ChaCha8Rng::seed_from_u64(1));
        s.agents = vec![net.clone()];
        s.optimizers = vec![Optimizer::new(0.01, OptimizerKind::Sgd, net.param_count())];
        let o = [0.3, -1.2, 1.0, 0.0];
        let t = Transition {
            observations: vec![o],
            actions: vec![true],
            rewards: vec![-2.0],
            selected: vec![true],
            next_observations: vec![o],
        };
        let q = net.forward(&o).unwrap()[1];
        let g = 2.0 * (q + 2.0);
        let mut expected = net.params().to_vec();
        for i in 0..4 {
            expected[4 + i] -= 0.01 * g * o[i];
        }
        expected[8 + 1] -= 0.01 * g;
        s.train_on(&[&t]).unwrap();
        for (a, b) in s.agents[0].params().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn targets_sync_on_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = setup(2, 0.9);
        cfg.trainer.target_sync = 3;
        let mut s = QmixStrategy::new(&cfg, MixMode::Global).unwrap();
        let batch: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng, 2)).collect();
        let refs: Vec<_> = batch.iter().collect();
        s.train_on(&refs).unwrap();
        s.train_on(&refs).unwrap();
        assert_ne!(s.targets[0], s.agents[0]);
        s.train_on(&refs).unwrap();
        assert_eq!(s.targets[0], s.agents[0]);
    }
}
