//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector laid out layer by layer as the
//! row-major weight matrix (`outputs x inputs`) followed by the bias.

mod replay;

pub use replay::ReplayBuffer;

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Absolute,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Absolute => x.abs(),
        }
    }

    /// Derivative; kinks take the right-hand value for relu and 0 for abs.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Absolute => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<LayerShape>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Cached activations from one forward pass, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `values[0]` is the input, `values[k + 1]` the output of layer `k`.
    values: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Pre-activation values, one vector per layer.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

impl DenseNet {
    /// Zero-initialised network; `layers` lists `(outputs, activation)`.
    pub fn new(inputs: usize, layers: &[(usize, Activation)]) -> Result<Self> {
        if inputs == 0 || layers.is_empty() || layers.iter().any(|l| l.0 == 0) {
            return Err(Error::Contract("network layers must be non-empty".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut width = inputs;
        for &(outputs, activation) in layers {
            shapes.push(LayerShape { inputs: width, outputs, activation });
            width = outputs;
        }
        Self::from_shapes(shapes, None)
    }

    fn from_shapes(layers: Vec<LayerShape>, params: Option<Vec<f64>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    context: "consecutive layer widths",
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                });
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        let params = match params {
            Some(p) if p.len() != total => {
                return Err(Error::DimensionMismatch {
                    context: "parameter vector",
                    expected: total,
                    actual: p.len(),
                })
            }
            Some(p) => p,
            None => vec![0.0; total],
        };
        Ok(Self { layers, offsets, params })
    }

    /// Uniform `+-1/sqrt(fan_in)` initialisation.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (k, l) in self.layers.iter().enumerate() {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            let start = self.offsets[k];
            for p in &mut self.params[start..start + l.param_count()] {
                *p = rng.random_range(-bound..=bound);
            }
        }
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn copy_params_from(&mut self, other: &DenseNet) -> Result<()> {
        if self.layers != other.layers {
            return Err(Error::Contract("cannot copy parameters between different shapes".into()));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        Ok(trace.values.pop().unwrap_or_default())
    }

    /// Forward pass keeping everything `backward` needs.
    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_len(),
                actual: input.len(),
            });
        }
        let n = self.layers.len();
        trace.values.resize_with(n + 1, Vec::new);
        trace.pre.resize_with(n, Vec::new);
        trace.values[0].clear();
        trace.values[0].extend_from_slice(input);
        for (k, l) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_params(k);
            let (before, after) = trace.values.split_at_mut(k + 1);
            let x = &before[k];
            let pre = &mut trace.pre[k];
            pre.clear();
            pre.extend(b.iter().enumerate().map(|(o, &bias)| {
                let row = &w[o * l.inputs..(o + 1) * l.inputs];
                bias + dot(row, x)
            }));
            let out = &mut after[0];
            out.clear();
            out.extend(pre.iter().map(|&z| l.activation.apply(z)));
        }
        Ok(())
    }

    /// Accumulates `d(upstream . output)/d(params)` into `grad` and returns
    /// the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_len() {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient",
                expected: self.output_len(),
                actual: upstream.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient buffer",
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        if trace.pre.len() != self.layers.len() {
            return Err(Error::Contract("backward called without a matching forward trace".into()));
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = self.layers[k];
            for (d, &z) in delta.iter_mut().zip(&trace.pre[k]) {
                *d *= l.activation.derivative(z);
            }
            let x = &trace.values[k];
            let start = self.offsets[k];
            let (gw, gb) = grad[start..start + l.param_count()].split_at_mut(l.inputs * l.outputs);
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (g, &xi) in gw[o * l.inputs..(o + 1) * l.inputs].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
                gb[o] += d;
            }
            let (w, _) = self.layer_params(k);
            let mut next = vec![0.0; l.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (n, &wi) in next.iter_mut().zip(&w[o * l.inputs..(o + 1) * l.inputs]) {
                        *n += d * wi;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    fn layer_params(&self, k: usize) -> (&[f64], &[f64]) {
        let l = self.layers[k];
        let start = self.offsets[k];
        self.params[start..start + l.param_count()].split_at(l.inputs * l.outputs)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = NetHeader {
            format: FORMAT_TAG.into(),
            layers: self.layers.clone(),
            param_count: self.params.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        let mut bytes = Vec::with_capacity(1 + 8 * self.params.len());
        bytes.push(b'\n');
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        out.write_all(&bytes).map_err(|e| Error::io("network stream", e))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io("network stream", e))?;
        let header: NetHeader = serde_json::from_str(line.trim_end())?;
        if header.format != FORMAT_TAG {
            return Err(Error::Contract(format!("unknown network format {:?}", header.format)));
        }
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io("network stream", e))?;
        if bytes.len() != 8 * header.param_count {
            return Err(Error::DimensionMismatch {
                context: "serialized parameter bytes",
                expected: 8 * header.param_count,
                actual: bytes.len(),
            });
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_shapes(header.layers, Some(params))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

/// Rescales the gradient blocks jointly so their combined L2 norm is at most
/// `max_norm` (0 disables). Returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

const FORMAT_TAG: &str = "dense-f64-le/1";

#[derive(Serialize, Deserialize)]
struct NetHeader {
    format: String,
    layers: Vec<LayerShape>,
    param_count: usize,
}

/// Four independent partial sums so the loop vectorizes; the summation
/// order is fixed, so results stay reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
}

/// Gradient-descent state for one network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub learning_rate: f64,
    pub kind: OptimizerKind,
    velocity: Vec<f64>,
    skipped: u64,
}

impl Optimizer {
    pub fn new(learning_rate: f64, kind: OptimizerKind, param_count: usize) -> Self {
        let velocity = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Momentum { .. } => vec![0.0; param_count],
        };
        Self { learning_rate, kind, velocity, skipped: 0 }
    }

    /// Updates dropped because the gradient was not finite.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Applies one step; returns `false` when the step was skipped.
    pub fn step(&mut self, net: &mut DenseNet, grad: &[f64]) -> Result<bool> {
        if grad.len() != net.param_count() {
            return Err(Error::DimensionMismatch {
                context: "optimizer gradient",
                expected: net.param_count(),
                actual: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return Ok(false);
        }
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in net.params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Momentum { beta } => {
                for ((p, v), g) in net.params.iter_mut().zip(&mut self.velocity).zip(grad) {
                    *v = beta * *v + g;
                    *p -= lr * *v;
                }
            }
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("parameters became non-finite".into()));
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng) -> DenseNet {
        let depth = rng.random_range(1..=4);
        let kinds = [Activation::Relu, Activation::Identity, Activation::Absolute];
        let layers: Vec<_> = (0..depth)
            .map(|_| (rng.random_range(1..=6), kinds[rng.random_range(0..3)]))
            .collect();
        let mut net = DenseNet::new(rng.random_range(1..=5), &layers).unwrap();
        net.init(rng);
        net
    }

    /// Straightforward nested-loop evaluation, independent of the traced path.
    fn naive_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut offset = 0;
        for l in net.layers() {
            let mut next = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut z = net.params()[offset + l.inputs * l.outputs + o];
                for i in 0..l.inputs {
                    z += net.params()[offset + o * l.inputs + i] * cur[i];
                }
                next[o] = match l.activation {
                    Activation::Relu => if z > 0.0 { z } else { 0.0 },
                    Activation::Identity => z,
                    Activation::Absolute => if z < 0.0 { -z } else { z },
                };
            }
            offset += l.inputs * l.outputs + l.outputs;
            cur = next;
        }
        cur
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut net = DenseNet::new(3, &[(3, Activation::Identity)]).unwrap();
        for i in 0..3 {
            net.params_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn relu_layer_clips_negatives() {
        let mut net = DenseNet::new(2, &[(2, Activation::Relu)]).unwrap();
        net.params_mut()[0] = 1.0;
        net.params_mut()[3] = 1.0;
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn forward_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let net = random_net(&mut rng);
            let x: Vec<f64> = (0..net.input_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = naive_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = DenseNet::new(3, &[(2, Activation::Relu)]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = DenseNet::new(3, &[(1, Activation::Identity)]).unwrap();
        net.init(&mut rng);
        let x = [0.5, -1.5, 2.0];
        let mut trace = Trace::default();
        net.forward_trace(&x, &mut trace).unwrap();
        let mut grad = vec![0.0; net.param_count()];
        let gin = net.backward(&trace, &[3.0], &mut grad).unwrap();
        assert_eq!(&grad[..3], &[1.5, -4.5, 6.0]);
        assert_eq!(grad[3], 3.0);
        for i in 0..3 {
            assert_eq!(gin[i], 3.0 * net.params()[i]);
        }
    }

    #[test]
    fn absolute_matches_identity_for_positive_preactivation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = DenseNet::new(2, &[(2, Activation::Absolute)]).unwrap();
        a.init(&mut rng);
        // force positive pre-activations through the bias
        a.params_mut()[4] = 10.0;
        a.params_mut()[5] = 10.0;
        let mut b = DenseNet::from_shapes(
            vec![LayerShape { inputs: 2, outputs: 2, activation: Activation::Identity }],
            Some(a.params().to_vec()),
        )
        .unwrap();
        b.params_mut().copy_from_slice(a.params());
        let x = [0.3, -0.7];
        let (mut ta, mut tb) = (Trace::default(), Trace::default());
        a.forward_trace(&x, &mut ta).unwrap();
        b.forward_trace(&x, &mut tb).unwrap();
        let (mut ga, mut gb) = (vec![0.0; 6], vec![0.0; 6]);
        let ia = a.backward(&ta, &[1.0, -2.0], &mut ga).unwrap();
        let ib = b.backward(&tb, &[1.0, -2.0], &mut gb).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(ia, ib);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let net = random_net(&mut rng);
            let err = gradient_check(&net, &mut rng);
            assert!(err < 1e-4, "{err}");
        }
    }

    /// Max relative error between backward and central differences of
    /// `upstream . forward(x)`, with inputs chosen away from kinks.
    fn gradient_check(net: &DenseNet, rng: &mut ChaCha8Rng) -> f64 {
        let h = 1e-5;
        let x: Vec<f64> = (0..net.input_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let up: Vec<f64> = (0..net.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |n: &DenseNet, x: &[f64]| dot(&n.forward(x).unwrap(), &up);
        let mut trace = Trace::default();
        net.forward_trace(&x, &mut trace).unwrap();
        if trace.pre.iter().flatten().any(|z| z.abs() < 1e-3) {
            return 0.0;
        }
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&trace, &up, &mut grad).unwrap();
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        for i in 0..net.param_count() {
            let p = net.params()[i];
            probe.params_mut()[i] = p + h;
            let fp = f(&probe, &x);
            probe.params_mut()[i] = p - h;
            let fm = f(&probe, &x);
            probe.params_mut()[i] = p;
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3));
        }
        worst
    }

    #[test]
    fn zero_gradient_and_zero_rate_leave_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = random_net(&mut rng);
        let before = net.params().to_vec();
        let mut opt = Optimizer::new(0.1, OptimizerKind::Sgd, net.param_count());
        let n = net.param_count();
        opt.step(&mut net, &vec![0.0; n]).unwrap();
        assert_eq!(net.params(), &before[..]);
        let mut still = Optimizer::new(0.0, OptimizerKind::Sgd, net.param_count());
        still.step(&mut net, &vec![1.0; n]).unwrap();
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut net = DenseNet::new(1, &[(1, Activation::Identity)]).unwrap();
        let mut opt = Optimizer::new(0.1, OptimizerKind::Sgd, 2);
        assert!(!opt.step(&mut net, &[f64::NAN, 0.0]).unwrap());
        assert_eq!(opt.skipped(), 1);
        assert_eq!(net.params(), &[0.0, 0.0]);
    }

    #[test]
    fn sgd_solves_quadratic() {
        // loss (w - 3)^2 + (b + 1)^2 on a single identity neuron's parameters
        for kind in [OptimizerKind::Sgd, OptimizerKind::Momentum { beta: 0.5 }] {
            let mut net = DenseNet::new(1, &[(1, Activation::Identity)]).unwrap();
            let mut opt = Optimizer::new(0.1, kind, 2);
            for _ in 0..100 {
                let p = net.params().to_vec();
                let g = [2.0 * (p[0] - 3.0), 2.0 * (p[1] + 1.0)];
                opt.step(&mut net, &g).unwrap();
            }
            assert!((net.params()[0] - 3.0).abs() < 1e-6, "{kind:?}");
            assert!((net.params()[1] + 1.0).abs() < 1e-6, "{kind:?}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = random_net(&mut rng);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = DenseNet::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        buf.truncate(buf.len() - 3);
        assert!(DenseNet::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn absolute_output_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = DenseNet::new(3, &[(5, Activation::Relu), (4, Activation::Absolute)]).unwrap();
        net.init(&mut rng);
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            assert!(net.forward(&x).unwrap().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn same_seed_same_init() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut n = DenseNet::new(4, &[(64, Activation::Relu), (64, Activation::Relu), (2, Activation::Identity)]).unwrap();
            n.init(&mut rng);
            n
        };
        assert_eq!(mk(), mk());
        assert_eq!(mk().param_count(), 4 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
    }

    #[test]
    fn clipping_rescales_jointly() {
        let mut a = vec![3.0, 0.0];
        let mut b = vec![4.0];
        let norm = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(norm, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-15 && (b[0] - 0.8).abs() < 1e-15);
        assert_eq!(a[1], 0.0);

        let mut c = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut [&mut c], 10.0), 5.0);
        assert_eq!(c, [3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut [&mut c], 0.0), 5.0);
        assert_eq!(c, [3.0, 4.0], "zero ceiling disables clipping");
    }
}
