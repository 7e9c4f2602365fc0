//! Randomized property checks against brute-force or numerical oracles.
//!
//! Each check draws its instances from a seeded generator, so a failure is
//! reproducible from the seed alone.

use std::time::Instant;

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::FrequencyAnalysis;
use crate::error::Result;
use crate::marl::tabular::sup_distance;
use crate::marl::{combine, MixMode, MixingNetwork, TabularMdp};
use crate::metrics::{next_bs_aoi, next_device_aoi, slot_energy};
use crate::neural::{Activation, DenseNet, Trace};
use crate::selector::{brute_force_select, select, SelectionProblem};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub instances: usize,
    /// Worst observed value of the checked quantity, or the first violation.
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, instances: usize, body: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome { name, passed, instances, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn random_problem(rng: &mut impl Rng, max_devices: usize, max_budget: usize) -> SelectionProblem {
    let m = rng.random_range(1..=max_devices);
    // coarse values make exact ties common
    let value = |rng: &mut dyn rand::RngCore| -> f64 {
        if rng.random_bool(0.3) {
            f64::from(rng.random_range(-4i32..=4)) * 0.25
        } else {
            rng.random_range(-3.0..3.0)
        }
    };
    SelectionProblem {
        c1: (0..m).map(|_| value(rng)).collect(),
        c2: (0..m).map(|_| value(rng).abs()).collect(),
        rb_budget: rng.random_range(1..=max_budget),
        has_packet: (0..m).map(|_| rng.random_bool(0.8)).collect(),
    }
}

/// Greedy selection against exhaustive search, exact objective equality.
pub fn selector_optimality(instances: usize, seed: u64) -> CheckOutcome {
    timed("selector optimality", instances, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..instances {
            let p = random_problem(&mut rng, 12, 6);
            let fast = select(&p)?;
            let slow = brute_force_select(&p)?;
            let (a, b) = (p.objective(&fast), p.objective(&slow));
            if a != b || !p.is_feasible(&fast) {
                return Ok((false, format!("instance {k}: greedy {a} vs exhaustive {b}")));
            }
        }
        Ok((true, "all objectives identical".into()))
    })
}

pub fn random_net(rng: &mut impl Rng, max_depth: usize) -> Result<DenseNet> {
    let kinds = [Activation::Relu, Activation::Identity, Activation::Absolute];
    let depth = rng.random_range(1..=max_depth);
    let layers: Vec<_> = (0..depth).map(|_| (rng.random_range(1..=8), kinds[rng.random_range(0..3)])).collect();
    let mut net = DenseNet::new(rng.random_range(1..=6), &layers)?;
    net.init(rng);
    Ok(net)
}

/// Largest relative gap between backward and central differences of
/// `upstream . net(x)`; inputs are redrawn until no unit sits near a kink.
pub fn gradient_error(net: &DenseNet, rng: &mut impl Rng) -> Result<f64> {
    let h = 1e-5;
    let mut trace = Trace::default();
    let mut x: Vec<f64>;
    let mut tries = 0;
    loop {
        x = (0..net.input_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        net.forward_trace(&x, &mut trace)?;
        tries += 1;
        if tries > 100 || trace.pre_activations().iter().flatten().all(|z| z.abs() > 1e-3) {
            break;
        }
    }
    let up: Vec<f64> = (0..net.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |n: &DenseNet| -> Result<f64> { Ok(n.forward(&x)?.iter().zip(&up).map(|(a, b)| a * b).sum()) };
    let mut grad = vec![0.0; net.param_count()];
    net.backward(&trace, &up, &mut grad)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..net.param_count() {
        let p = net.params()[i];
        probe.params_mut()[i] = p + h;
        let plus = objective(&probe)?;
        probe.params_mut()[i] = p - h;
        let minus = objective(&probe)?;
        probe.params_mut()[i] = p;
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3));
    }
    Ok(worst)
}

pub fn gradient_exactness(instances: usize, seed: u64) -> CheckOutcome {
    timed("gradient exactness", instances, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let net = random_net(&mut rng, 4)?;
            worst = worst.max(gradient_error(&net, &mut rng)?);
        }
        Ok((worst < 1e-4, format!("max relative error {worst:.3e}")))
    })
}

/// Finite-difference slopes of the mixed value, plus joint-max decomposition
/// on instances with at most four devices.
pub fn mixing_monotonicity(instances: usize, seed: u64) -> CheckOutcome {
    timed("mixing monotonicity", instances, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut min_slope = f64::INFINITY;
        let mut joint_checked = 0;
        for k in 0..instances {
            let m = rng.random_range(1..=6);
            let mode = if rng.random_bool(0.5) { MixMode::Partial } else { MixMode::Global };
            let mut mixer = MixingNetwork::new(m, 4 * m, rng.random_range(1..=16), mode)?;
            mixer.init(&mut rng);
            let state: Vec<f64> = (0..4 * m).map(|_| rng.random_range(-3.0..3.0)).collect();
            let selected: Vec<bool> = (0..m).map(|_| rng.random_bool(0.6)).collect();
            let q: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
            let h = 1e-6;
            for d in 0..m {
                let mut up = q.clone();
                let mut down = q.clone();
                up[d] += h;
                down[d] -= h;
                let slope = (mixer.mix(&up, &selected, &state)? - mixer.mix(&down, &selected, &state)?) / (2.0 * h);
                min_slope = min_slope.min(slope);
                if slope < -1e-9 {
                    return Ok((false, format!("probe {k}: slope {slope} for device {d}")));
                }
            }
            if m <= 4 {
                let tables: Vec<[f64; 2]> =
                    (0..m).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
                let (w, b) = mixer.weights(&state)?;
                let mask = mode.mask(&selected);
                let best: Vec<f64> = tables.iter().map(|t| t[0].max(t[1])).collect();
                let decomposed = combine(&w, &b, &best, &mask)?;
                let mut joint = f64::NEG_INFINITY;
                for bits in 0..1u32 << m {
                    let pick: Vec<f64> = (0..m).map(|d| tables[d][((bits >> d) & 1) as usize]).collect();
                    joint = joint.max(combine(&w, &b, &pick, &mask)?);
                }
                if decomposed != joint {
                    return Ok((false, format!("probe {k}: decomposed {decomposed} vs joint {joint}")));
                }
                joint_checked += 1;
            }
        }
        Ok((true, format!("min slope {min_slope:.3e}; {joint_checked} joint-max probes equal")))
    })
}

/// Contraction of the optimality operator and geometric convergence of
/// value iteration on random finite MDPs.
pub fn bellman_contraction(instances: usize, seed: u64) -> CheckOutcome {
    timed("bellman contraction", instances, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = 0.9;
        let mut worst_ratio: f64 = 0.0;
        for k in 0..instances {
            let s = rng.random_range(1..=20);
            let a = rng.random_range(1..=4);
            let mdp = TabularMdp::random(&mut rng, s, a, gamma)?;
            let scale = rng.random_range(0.1..100.0);
            let q1: Vec<f64> = (0..s * a).map(|_| rng.random_range(-scale..scale)).collect();
            let q2: Vec<f64> = (0..s * a).map(|_| rng.random_range(-scale..scale)).collect();
            let before = sup_distance(&q1, &q2);
            let after = sup_distance(&mdp.bellman_apply(&q1)?, &mdp.bellman_apply(&q2)?);
            if after > gamma * before + 1e-12 {
                return Ok((false, format!("mdp {k}: {after} > {gamma} * {before}")));
            }
            if before > 0.0 {
                worst_ratio = worst_ratio.max(after / before);
            }
            let tol = 1e-10;
            let (q, changes) = mdp.value_iteration(&q1, tol, 2000)?;
            let first = changes[0];
            for (i, c) in changes.iter().enumerate() {
                if *c > gamma.powi(i as i32) * first + 1e-12 {
                    return Ok((false, format!("mdp {k}: step {i} change {c} above geometric bound")));
                }
            }
            let residual = sup_distance(&mdp.bellman_apply(&q)?, &q);
            if residual > tol {
                return Ok((false, format!("mdp {k}: fixed-point residual {residual}")));
            }
        }
        Ok((true, format!("worst contraction ratio {worst_ratio:.4}")))
    })
}

fn random_spectrum(rng: &mut impl Rng) -> Vec<Complex<f64>> {
    (0..rng.random_range(1..=6))
        .map(|_| Complex::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect()
}

/// Sampling-frequency and AoI bookkeeping rules.
pub fn nyquist_semantics(instances: usize, seed: u64) -> CheckOutcome {
    timed("nyquist and aoi semantics", instances, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fail = |what: String| Ok((false, what));
        for k in 0..instances {
            let eigs = random_spectrum(&mut rng);
            let xi = rng.random_range(0.5..20.0);
            let eps = rng.random_range(0.0..5.0);
            let cap = 5.0;
            let e1 = rng.random_range(0.0..10.0);
            let e2 = e1 + rng.random_range(0.0..10.0);
            let lo = FrequencyAnalysis::new(eigs.clone(), e1, eps, xi, cap);
            let hi = FrequencyAnalysis::new(eigs, e2, eps, xi, cap);
            if hi.max_variation_frequency < lo.max_variation_frequency {
                return fail(format!("case {k}: frequency fell as the error grew"));
            }
            for f in [&lo, &hi] {
                if f.max_variation_frequency > 0.0 && (f.max_sampling_interval * f.sampling_frequency - 1.0).abs() > 1e-12 {
                    return fail(format!("case {k}: interval times frequency is not 1"));
                }
            }

            let tau = rng.random_range(0.1..2.0);
            let interval = rng.random_range(0.0..10.0);
            let elapsed = rng.random_range(0.0..=1.0) * interval;
            let prev = rng.random_range(0.0..cap);
            if next_device_aoi(prev, true, elapsed, interval, tau, cap) != 0.0 {
                return fail(format!("case {k}: sampling within the interval left a nonzero age"));
            }
            let stale = next_device_aoi(prev, false, elapsed, interval, tau, cap);
            if stale > cap || stale != (prev + tau).min(cap) {
                return fail(format!("case {k}: device age without sampling is {stale}"));
            }

            let bs_cap = rng.random_range(1.0..10.0);
            let bs_prev = rng.random_range(0.0..=bs_cap);
            let next = next_bs_aoi(bs_prev, false, 0.0, None, tau, bs_cap)?;
            let expect = if bs_prev + tau >= bs_cap { bs_cap } else { bs_prev + tau };
            if next != expect || next > bs_cap {
                return fail(format!("case {k}: BS age {next} violates the clamp at {bs_cap}"));
            }

            let (cs, pt, l) = (rng.random_range(0.0..1e-2), rng.random_range(0.0..2.0), rng.random_range(0.0..1.0));
            let s = rng.random_bool(0.5);
            let u = rng.random_bool(0.5);
            let total = slot_energy(s, u, u.then_some(l), cs, pt)?;
            let parts = slot_energy(s, false, None, cs, pt)? + slot_energy(false, u, u.then_some(l), cs, pt)?;
            if (total - parts).abs() > 1e-12 {
                return fail(format!("case {k}: energy {total} is not the sum of its parts {parts}"));
            }
        }
        Ok((true, "all rules hold".into()))
    })
}

/// Instance counts for each check; `full` matches the release gate.
#[derive(Debug, Clone, Copy)]
pub struct SelftestScale {
    pub selector: usize,
    pub gradient: usize,
    pub mixing: usize,
    pub bellman: usize,
    pub nyquist: usize,
}

impl SelftestScale {
    pub fn full() -> Self {
        Self { selector: 1000, gradient: 100, mixing: 1000, bellman: 1000, nyquist: 10_000 }
    }

    pub fn quick() -> Self {
        Self { selector: 100, gradient: 20, mixing: 100, bellman: 50, nyquist: 1000 }
    }
}

pub fn run_selftest(scale: SelftestScale, seed: u64) -> Vec<CheckOutcome> {
    vec![
        selector_optimality(scale.selector, seed),
        gradient_exactness(scale.gradient, seed),
        mixing_monotonicity(scale.mixing, seed),
        bellman_contraction(scale.bellman, seed),
        nyquist_semantics(scale.nyquist, seed),
    ]
}
