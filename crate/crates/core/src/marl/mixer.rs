//! State-conditioned monotone mixing of per-device action values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Activation, DenseNet, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// Only devices holding an RB contribute.
    Partial,
    /// Every device contributes.
    Global,
    /// Unit weights and zero biases, selected devices only.
    Vdn,
}

impl MixMode {
    /// The contribution mask for a given selection.
    pub fn mask(self, selected: &[bool]) -> Vec<bool> {
        match self {
            MixMode::Global => vec![true; selected.len()],
            MixMode::Partial | MixMode::Vdn => selected.to_vec(),
        }
    }
}

/// `Q_tot = sum_m mask_m (w_m(o) Q_m + b_m(o))` with `w_m >= 0`.
#[derive(Debug, Clone)]
pub struct MixingNetwork {
    pub mode: MixMode,
    devices: usize,
    hyper_w: DenseNet,
    hyper_b: DenseNet,
}

/// Everything needed to backpropagate one mixing evaluation.
#[derive(Debug, Clone, Default)]
pub struct MixTrace {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    w_trace: Trace,
    b_trace: Trace,
}

impl MixingNetwork {
    /// Hypernetworks `4M -> hidden relu -> M` (abs for weights, identity for biases).
    pub fn new(devices: usize, state_len: usize, hidden: usize, mode: MixMode) -> Result<Self> {
        let hyper_w = DenseNet::new(state_len, &[(hidden, Activation::Relu), (devices, Activation::Absolute)])?;
        let hyper_b = DenseNet::new(state_len, &[(hidden, Activation::Relu), (devices, Activation::Identity)])?;
        Ok(Self { mode, devices, hyper_w, hyper_b })
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.hyper_w.init(rng);
        self.hyper_b.init(rng);
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn hyper_w(&self) -> &DenseNet {
        &self.hyper_w
    }

    pub fn hyper_b(&self) -> &DenseNet {
        &self.hyper_b
    }

    pub fn hyper_w_mut(&mut self) -> &mut DenseNet {
        &mut self.hyper_w
    }

    pub fn hyper_b_mut(&mut self) -> &mut DenseNet {
        &mut self.hyper_b
    }

    pub fn copy_from(&mut self, other: &MixingNetwork) -> Result<()> {
        self.hyper_w.copy_params_from(&other.hyper_w)?;
        self.hyper_b.copy_params_from(&other.hyper_b)
    }

    /// Mixing weights and biases for a global state.
    pub fn weights(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut t = MixTrace::default();
        self.trace(state, &mut t)?;
        Ok((t.weights, t.biases))
    }

    pub fn trace(&self, state: &[f64], out: &mut MixTrace) -> Result<()> {
        if self.mode == MixMode::Vdn {
            out.weights = vec![1.0; self.devices];
            out.biases = vec![0.0; self.devices];
            return Ok(());
        }
        self.hyper_w.forward_trace(state, &mut out.w_trace)?;
        self.hyper_b.forward_trace(state, &mut out.b_trace)?;
        out.weights = out.w_trace.output().to_vec();
        out.biases = out.b_trace.output().to_vec();
        Ok(())
    }

    /// Mixed value given per-device values and the selection vector.
    pub fn mix(&self, q: &[f64], selected: &[bool], state: &[f64]) -> Result<f64> {
        let (w, b) = self.weights(state)?;
        combine(&w, &b, q, &self.mode.mask(selected))
    }

    /// Accumulates hypernetwork gradients for `d loss / d Q_tot = upstream`.
    pub fn backward(
        &self,
        trace: &MixTrace,
        q: &[f64],
        mask: &[bool],
        upstream: f64,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Result<()> {
        if self.mode == MixMode::Vdn {
            return Ok(());
        }
        let dw: Vec<f64> = q
            .iter()
            .zip(mask)
            .map(|(&qm, &on)| if on { upstream * qm } else { 0.0 })
            .collect();
        let db: Vec<f64> = mask.iter().map(|&on| if on { upstream } else { 0.0 }).collect();
        self.hyper_w.backward(&trace.w_trace, &dw, grad_w)?;
        self.hyper_b.backward(&trace.b_trace, &db, grad_b)?;
        Ok(())
    }
}

/// `sum_m mask_m (w_m q_m + b_m)`.
pub fn combine(w: &[f64], b: &[f64], q: &[f64], mask: &[bool]) -> Result<f64> {
    let m = mask.len();
    for (context, len) in [("mixing weights", w.len()), ("mixing biases", b.len()), ("device values", q.len())] {
        if len != m {
            return Err(Error::DimensionMismatch { context, expected: m, actual: len });
        }
    }
    Ok((0..m).filter(|&i| mask[i]).map(|i| w[i] * q[i] + b[i]).sum())
}
