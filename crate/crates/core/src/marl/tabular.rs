//! Finite MDPs for checking the Bellman optimality operator numerically.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub states: usize,
    pub actions: usize,
    /// `transitions[(a * states + o) * states + o2]`
    pub transitions: Vec<f64>,
    /// `rewards[o * actions + a]`
    pub rewards: Vec<f64>,
    pub discount: f64,
}

/// Row-major `states x actions` action-value table.
pub type QTable = Vec<f64>;

impl TabularMdp {
    pub fn new(states: usize, actions: usize, transitions: Vec<f64>, rewards: Vec<f64>, discount: f64) -> Result<Self> {
        if states == 0 || actions == 0 {
            return Err(Error::Contract("MDP needs at least one state and action".into()));
        }
        if transitions.len() != actions * states * states {
            return Err(Error::DimensionMismatch {
                context: "transition tensor",
                expected: actions * states * states,
                actual: transitions.len(),
            });
        }
        if rewards.len() != states * actions {
            return Err(Error::DimensionMismatch {
                context: "reward table",
                expected: states * actions,
                actual: rewards.len(),
            });
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Contract(format!("discount {discount} outside [0, 1)")));
        }
        for row in transitions.chunks(states) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Contract("transition rows must be distributions".into()));
            }
        }
        Ok(Self { states, actions, transitions, rewards, discount })
    }

    /// Random dense MDP with rewards in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, states: usize, actions: usize, discount: f64) -> Result<Self> {
        let mut transitions = Vec::with_capacity(actions * states * states);
        for _ in 0..actions * states {
            let row: Vec<f64> = (0..states).map(|_| rng.random::<f64>() + 1e-12).collect();
            let total: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|p| p / total));
        }
        let rewards = (0..states * actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self::new(states, actions, transitions, rewards, discount)
    }

    fn row(&self, o: usize, a: usize) -> &[f64] {
        let start = (a * self.states + o) * self.states;
        &self.transitions[start..start + self.states]
    }

    /// `(HQ)(o,a) = sum_o2 P_a(o,o2) [R(o,a) + discount * max_a2 Q(o2,a2)]`.
    pub fn bellman_apply(&self, q: &[f64]) -> Result<QTable> {
        if q.len() != self.states * self.actions {
            return Err(Error::DimensionMismatch {
                context: "Q table",
                expected: self.states * self.actions,
                actual: q.len(),
            });
        }
        let best: Vec<f64> = q
            .chunks(self.actions)
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut out = vec![0.0; q.len()];
        for o in 0..self.states {
            for a in 0..self.actions {
                let r = self.rewards[o * self.actions + a];
                out[o * self.actions + a] = self
                    .row(o, a)
                    .iter()
                    .zip(&best)
                    .map(|(p, v)| p * (r + self.discount * v))
                    .sum();
            }
        }
        Ok(out)
    }

    /// Iterates `H` from `q0` until successive iterates differ by at most
    /// `tol` in sup norm; returns the final table and each step's change.
    pub fn value_iteration(&self, q0: &[f64], tol: f64, max_iters: usize) -> Result<(QTable, Vec<f64>)> {
        let mut q = q0.to_vec();
        let mut changes = Vec::new();
        for _ in 0..max_iters {
            let next = self.bellman_apply(&q)?;
            let change = sup_distance(&next, &q);
            changes.push(change);
            q = next;
            if change <= tol {
                return Ok((q, changes));
            }
        }
        Err(Error::Numerical(format!("value iteration did not reach {tol} in {max_iters} steps")))
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
