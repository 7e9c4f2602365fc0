use crate::error::Result;
use crate::neural::{clip_global_norm, DenseNet, Optimizer, ReplayBuffer, Trace};
use crate::rng::{self, tag, StreamRng};

use super::{epsilon_greedy, SamplingStrategy, StepContext, StrategySetup, TrainerConfig, Transition};

/// Independent Q-learners, each fitting its own reward with no mixing.
pub struct DqnStrategy {
    cfg: TrainerConfig,
    agents: Vec<DenseNet>,
    targets: Vec<DenseNet>,
    optimizers: Vec<Optimizer>,
    buffer: ReplayBuffer<Transition>,
    train_steps: u64,
    skipped: u64,
}

impl DqnStrategy {
    pub fn new(setup: &StrategySetup) -> Result<Self> {
        let cfg = setup.trainer.clone();
        let mut init = rng::stream(setup.seed, &[tag::INIT]);
        let mut agents = Vec::with_capacity(setup.devices);
        for _ in 0..setup.devices {
            let mut net = cfg.device_net()?;
            net.init(&mut init);
            agents.push(net);
        }
        let optimizers = agents
            .iter()
            .map(|a| Optimizer::new(cfg.learning_rate, cfg.optimizer, a.param_count()))
            .collect();
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            targets: agents.clone(),
            agents,
            optimizers,
            cfg,
            train_steps: 0,
            skipped: 0,
        })
    }

    pub fn agents(&self) -> &[DenseNet] {
        &self.agents
    }

    /// Mean over devices of each device's mean squared TD error.
    pub fn train_on(&mut self, batch: &[&Transition]) -> Result<Option<f64>> {
        let m = self.agents.len();
        let n = batch.len() as f64;
        let mut trace = Trace::default();
        let mut grads: Vec<Vec<f64>> = self.agents.iter().map(|a| vec![0.0; a.param_count()]).collect();
        let mut loss = 0.0;
        for t in batch {
            for d in 0..m {
                let target = if self.cfg.discount == 0.0 {
                    t.rewards[d]
                } else {
                    let next = self.targets[d].forward(&t.next_observations[d])?;
                    t.rewards[d] + self.cfg.discount * next[0].max(next[1])
                };
                self.agents[d].forward_trace(&t.observations[d], &mut trace)?;
                let a = usize::from(t.actions[d]);
                let err = trace.output()[a] - target;
                loss += err * err / (n * m as f64);
                let mut head = [0.0; 2];
                head[a] = 2.0 * err / n;
                self.agents[d].backward(&trace, &head, &mut grads[d])?;
            }
        }
        if !loss.is_finite() {
            self.skipped += 1;
            return Ok(None);
        }
        for d in 0..m {
            clip_global_norm(&mut [grads[d].as_mut_slice()], self.cfg.grad_clip);
            if !self.optimizers[d].step(&mut self.agents[d], &grads[d])? {
                self.skipped += 1;
            }
        }
        self.train_steps += 1;
        if self.train_steps % self.cfg.target_sync == 0 {
            for (t, a) in self.targets.iter_mut().zip(&self.agents) {
                t.copy_params_from(a)?;
            }
        }
        Ok(Some(loss))
    }
}

impl SamplingStrategy for DqnStrategy {
    fn name(&self) -> &str {
        "dqn"
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
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| (format!("device_{i}"), a))
            .collect()
    }

    fn skipped_updates(&self) -> u64 {
        self.skipped + self.optimizers.iter().map(Optimizer::skipped).sum::<u64>()
    }
}
