//! Monitored physical processes.
//!
//! Each device watches a discrete-time nonlinear process
//! `x' = A x + f(x) + eps` with a bounded disturbance. From the most recent
//! sample the device predicts the current state with the noiseless model; the
//! prediction error, together with the spectrum of the linearised dynamics,
//! bounds how fast the process can vary and therefore how often it must be
//! sampled.

mod eigen;

pub use eigen::{eigenvalues, MAX_DIM};

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Closed catalog of nonlinear terms. Every member maps zero to zero.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    Zero,
    /// `f(x) = G tanh(x)` with `tanh` applied elementwise.
    Tanh { gain: DMatrix<f64> },
    /// `f(x) = -c .* x^3`, elementwise cubic damping.
    Cubic { coef: DVector<f64> },
}

impl Nonlinearity {
    pub fn kind(&self) -> &'static str {
        match self {
            Nonlinearity::Zero => "zero",
            Nonlinearity::Tanh { .. } => "tanh",
            Nonlinearity::Cubic { .. } => "cubic",
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Nonlinearity::Zero => DVector::zeros(x.len()),
            Nonlinearity::Tanh { gain } => gain * x.map(f64::tanh),
            Nonlinearity::Cubic { coef } => x.zip_map(coef, |xi, c| -c * xi * xi * xi),
        }
    }

    /// Analytic Jacobian of `f` at `x`.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        match self {
            Nonlinearity::Zero => DMatrix::zeros(d, d),
            Nonlinearity::Tanh { gain } => {
                let sech2 = x.map(|v| {
                    let t = v.tanh();
                    1.0 - t * t
                });
                let mut j = gain.clone();
                for (mut col, s) in j.column_iter_mut().zip(sech2.iter()) {
                    col *= *s;
                }
                j
            }
            Nonlinearity::Cubic { coef } => {
                DMatrix::from_diagonal(&x.zip_map(coef, |xi, c| -3.0 * c * xi * xi))
            }
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let actual = match self {
            Nonlinearity::Zero => return Ok(()),
            Nonlinearity::Tanh { gain } => {
                if gain.nrows() != gain.ncols() {
                    return Err(Error::Config("tanh gain must be square".into()));
                }
                gain.nrows()
            }
            Nonlinearity::Cubic { coef } => coef.len(),
        };
        if actual != d {
            return Err(Error::DimensionMismatch {
                context: "nonlinearity parameters",
                expected: d,
                actual,
            });
        }
        Ok(())
    }
}

/// Deterministic part of a process plus its disturbance bound and the
/// smallest frequency the sensor can resolve.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    pub a: DMatrix<f64>,
    pub nonlinearity: Nonlinearity,
    pub disturbance_bound: f64,
    pub min_frequency_hz: f64,
}

impl ProcessModel {
    pub fn new(
        a: DMatrix<f64>,
        nonlinearity: Nonlinearity,
        disturbance_bound: f64,
        min_frequency_hz: f64,
    ) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::Config(format!(
                "linear coefficient must be a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if d > MAX_DIM {
            return Err(Error::Config(format!("state dimension {d} exceeds {MAX_DIM}")));
        }
        nonlinearity.check_dim(d)?;
        if !(disturbance_bound >= 0.0 && disturbance_bound.is_finite()) {
            return Err(Error::Config("disturbance bound must be finite and >= 0".into()));
        }
        if !(min_frequency_hz > 0.0 && min_frequency_hz.is_finite()) {
            return Err(Error::Config("minimum frequency must be positive".into()));
        }
        Ok(Self {
            a,
            nonlinearity,
            disturbance_bound,
            min_frequency_hz,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Noiseless one-step map `A x + f(x)`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + self.nonlinearity.eval(x)
    }

    /// `A + J_f(x)`.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        &self.a + self.nonlinearity.jacobian(x)
    }

    /// Uniform draw from the L2 ball of radius `disturbance_bound`.
    pub fn draw_disturbance<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        if self.disturbance_bound == 0.0 {
            return DVector::zeros(d);
        }
        loop {
            let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = dir.norm();
            if norm > 1e-12 {
                let u: f64 = rng.random();
                let radius = self.disturbance_bound * u.powf(1.0 / d as f64);
                return dir * (radius / norm);
            }
        }
    }

    /// State prediction from a sample `delta` slots old:
    /// `A^delta x_s + sum_{q=1..delta} A^(q-1) f(x_{t-q})`, where the
    /// intermediate states come from the noiseless rollout of the sample.
    pub fn predict(&self, sample: &DVector<f64>, delta: u64) -> Option<DVector<f64>> {
        if delta == 0 {
            return Some(sample.clone());
        }
        let a_pow = matrix_power(&self.a, delta)?;
        let mut rolled = sample.clone();
        let mut forced = DVector::zeros(self.dim());
        for _ in 0..delta {
            // Horner accumulation: the oldest forcing term ends up with A^(delta-1)
            forced = &self.a * forced + self.nonlinearity.eval(&rolled);
            rolled = self.drift(&rolled);
            if !all_finite(&forced) || !all_finite(&rolled) {
                return None;
            }
        }
        let est = a_pow * sample + forced;
        all_finite(&est).then_some(est)
    }
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// `a^k` by repeated squaring. `None` on overflow.
pub fn matrix_power(a: &DMatrix<f64>, mut k: u64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
        if result.iter().chain(base.iter()).any(|v| !v.is_finite()) {
            return None;
        }
    }
    Some(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: DVector<f64>,
    pub slot: u64,
}

/// A simulated process instance owned by one device.
#[derive(Debug, Clone)]
pub struct PhysicalProcess {
    pub device: usize,
    pub model: ProcessModel,
    true_state: DVector<f64>,
    slot: u64,
    latest_sample: Option<Sample>,
}

impl PhysicalProcess {
    pub fn new(device: usize, model: ProcessModel, initial_state: DVector<f64>) -> Result<Self> {
        if initial_state.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                context: "initial state",
                expected: model.dim(),
                actual: initial_state.len(),
            });
        }
        Ok(Self {
            device,
            model,
            true_state: initial_state,
            slot: 0,
            latest_sample: None,
        })
    }

    pub fn true_state(&self) -> &DVector<f64> {
        &self.true_state
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn latest_sample(&self) -> Option<&Sample> {
        self.latest_sample.as_ref()
    }

    /// Advances one slot with a freshly drawn disturbance.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<&DVector<f64>> {
        let eps = self.model.draw_disturbance(rng);
        self.step_with(&eps)
    }

    /// Advances one slot with a caller-supplied disturbance.
    pub fn step_with(&mut self, disturbance: &DVector<f64>) -> Result<&DVector<f64>> {
        if disturbance.len() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                context: "disturbance",
                expected: self.model.dim(),
                actual: disturbance.len(),
            });
        }
        let next = self.model.drift(&self.true_state) + disturbance;
        if !all_finite(&next) {
            return Err(Error::Divergence {
                device: self.device,
                slot: self.slot + 1,
            });
        }
        self.true_state = next;
        self.slot += 1;
        Ok(&self.true_state)
    }

    /// Records the current true state as the latest sample.
    pub fn take_sample(&mut self) -> &Sample {
        self.latest_sample.insert(Sample {
            state: self.true_state.clone(),
            slot: self.slot,
        })
    }

    pub fn set_latest_sample(&mut self, sample: Sample) -> Result<()> {
        if sample.slot > self.slot {
            return Err(Error::SampleFromFuture {
                sample_slot: sample.slot,
                now: self.slot,
            });
        }
        self.latest_sample = Some(sample);
        Ok(())
    }

    /// Model-based estimate of the state at slot `now`.
    pub fn estimate_state(&self, now: u64) -> Result<DVector<f64>> {
        let sample = self
            .latest_sample
            .as_ref()
            .ok_or(Error::MissingSample { device: self.device })?;
        if sample.slot > now {
            return Err(Error::SampleFromFuture {
                sample_slot: sample.slot,
                now,
            });
        }
        self.model
            .predict(&sample.state, now - sample.slot)
            .ok_or(Error::Divergence {
                device: self.device,
                slot: now,
            })
    }

    /// `estimate - truth` at the current slot.
    pub fn estimation_error(&self) -> Result<DVector<f64>> {
        Ok(self.estimate_state(self.slot)? - &self.true_state)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.model.jacobian(x)
    }

    /// Maximum variation frequency and the Nyquist interval at the current slot.
    pub fn max_variation_frequency(&self, interval_cap: f64) -> Result<FrequencyAnalysis> {
        let estimate = self.estimate_state(self.slot)?;
        let error = &estimate - &self.true_state;
        let eig = eigenvalues(&self.model.jacobian(&estimate))?;
        Ok(FrequencyAnalysis::new(
            eig,
            error.norm(),
            self.model.disturbance_bound,
            self.model.min_frequency_hz,
            interval_cap,
        ))
    }
}

/// Spectrum-derived sampling requirements for one device and slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyAnalysis {
    pub eigenvalues: Vec<Complex<f64>>,
    pub error_norm: f64,
    /// rad/s
    pub max_variation_frequency: f64,
    /// Hz
    pub sampling_frequency: f64,
    /// s
    pub max_sampling_interval: f64,
}

impl FrequencyAnalysis {
    /// `Omega = max|Im mu| + sqrt(max(0, (|y|^2 + |eps|^2)/xi^2 - min (Re mu)^2))`,
    /// `F = Omega/pi`, `Delta = pi/Omega` (or `interval_cap` when `Omega = 0`).
    pub fn new(
        eigenvalues: Vec<Complex<f64>>,
        error_norm: f64,
        disturbance_norm: f64,
        min_frequency_hz: f64,
        interval_cap: f64,
    ) -> Self {
        let max_im = eigenvalues.iter().map(|m| m.im.abs()).fold(0.0, f64::max);
        let min_re_sq = eigenvalues
            .iter()
            .map(|m| m.re * m.re)
            .fold(f64::INFINITY, f64::min);
        let min_re_sq = if min_re_sq.is_finite() { min_re_sq } else { 0.0 };
        let energy = (error_norm * error_norm + disturbance_norm * disturbance_norm)
            / (min_frequency_hz * min_frequency_hz);
        let omega = max_im + (energy - min_re_sq).max(0.0).sqrt();
        let interval = if omega > 0.0 { PI / omega } else { interval_cap };
        Self {
            eigenvalues,
            error_norm,
            max_variation_frequency: omega,
            sampling_frequency: omega / PI,
            max_sampling_interval: interval,
        }
    }
}

/// Incrementally maintained noiseless rollout of the latest sample.
///
/// Produces the same prediction as [`ProcessModel::predict`] but advances in
/// O(d^2) per slot instead of re-rolling from the sample each time.
#[derive(Debug, Clone)]
pub struct Estimator {
    sample: Sample,
    rollout: DVector<f64>,
    rollout_slot: u64,
}

impl Estimator {
    pub fn new(sample: Sample) -> Self {
        Self {
            rollout: sample.state.clone(),
            rollout_slot: sample.slot,
            sample,
        }
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }

    pub fn reset(&mut self, sample: Sample) {
        *self = Self::new(sample);
    }

    pub fn estimate(&mut self, model: &ProcessModel, now: u64) -> Option<&DVector<f64>> {
        if now < self.rollout_slot {
            return None;
        }
        while self.rollout_slot < now {
            self.rollout = model.drift(&self.rollout);
            self.rollout_slot += 1;
            if !all_finite(&self.rollout) {
                return None;
            }
        }
        Some(&self.rollout)
    }
}
