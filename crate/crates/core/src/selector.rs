//! Resource-block assignment at the base station.
//!
//! The slot objective is separable and linear in the selection vector, so the
//! optimum takes every requesting device whose marginal cost `c1` is negative,
//! keeping the `I` most negative when there are more of them than RBs.

use crate::error::{Error, Result};

/// Largest instance [`brute_force_select`] will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub gamma_a: f64,
    pub gamma_e: f64,
    pub tx_power_w: f64,
    pub sampling_cost_j: f64,
    pub slot_duration: f64,
}

/// Inputs for one device's coefficient pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceInputs {
    /// Device AoI after this slot's sampling decision.
    pub device_aoi: f64,
    /// BS AoI at the end of the previous slot.
    pub prev_bs_aoi: f64,
    pub sampled: bool,
    pub expected_delay: f64,
}

/// `(c1, c2)`: the cost of device `m` is `c1 * u_m + c2`.
pub fn coefficients(inputs: &DeviceInputs, w: &CostWeights) -> (f64, f64) {
    let l = inputs.expected_delay;
    let c1 = w.gamma_a * (l + inputs.device_aoi - inputs.prev_bs_aoi - w.slot_duration)
        + w.gamma_e * w.tx_power_w * l;
    let s = if inputs.sampled { 1.0 } else { 0.0 };
    let c2 = w.gamma_e * s * w.sampling_cost_j + w.gamma_a * (inputs.prev_bs_aoi + w.slot_duration);
    (c1, c2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub rb_budget: usize,
    /// Devices holding a packet; only these may be selected.
    pub has_packet: Vec<bool>,
}

impl SelectionProblem {
    pub fn devices(&self) -> usize {
        self.c1.len()
    }

    fn validate(&self) -> Result<()> {
        let m = self.c1.len();
        for (context, len) in [("c2", self.c2.len()), ("packet flags", self.has_packet.len())] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: m,
                    actual: len,
                });
            }
        }
        if self.rb_budget == 0 {
            return Err(Error::Contract("resource block budget must be at least 1".into()));
        }
        if self.c1.iter().chain(&self.c2).any(|v| !v.is_finite()) {
            return Err(Error::Contract("selection coefficients must be finite".into()));
        }
        Ok(())
    }

    /// `sum_m (c1_m u_m + c2_m)`, accumulated in device order.
    pub fn objective(&self, u: &[bool]) -> f64 {
        self.c1
            .iter()
            .zip(&self.c2)
            .zip(u)
            .fold(0.0, |acc, ((&a, &b), &sel)| acc + if sel { a + b } else { b })
    }

    pub fn is_feasible(&self, u: &[bool]) -> bool {
        u.len() == self.devices()
            && u.iter().filter(|&&x| x).count() <= self.rb_budget
            && u.iter().zip(&self.has_packet).all(|(&sel, &p)| !sel || p)
    }
}

/// Threshold rule with a most-negative-first cut at the RB budget.
/// Ties in `c1` go to the lower device index.
pub fn select(problem: &SelectionProblem) -> Result<Vec<bool>> {
    problem.validate()?;
    let mut candidates: Vec<usize> = (0..problem.devices())
        .filter(|&m| problem.has_packet[m] && problem.c1[m] < 0.0)
        .collect();
    candidates.sort_by(|&a, &b| problem.c1[a].total_cmp(&problem.c1[b]).then(a.cmp(&b)));
    candidates.truncate(problem.rb_budget);
    let mut u = vec![false; problem.devices()];
    for m in candidates {
        u[m] = true;
    }
    Ok(u)
}

/// Exhaustive minimum over all feasible selections.
///
/// Among equal objectives the smallest selection wins, then the
/// lexicographically earliest list of selected indices.
pub fn brute_force_select(problem: &SelectionProblem) -> Result<Vec<bool>> {
    problem.validate()?;
    let m = problem.devices();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::EnumerationBound {
            devices: m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let allowed: u32 = (0..m).filter(|&i| problem.has_packet[i]).fold(0, |acc, i| acc | 1 << i);
    let mut best: Option<(f64, Vec<bool>)> = None;
    let mut u = vec![false; m];
    for mask in 0u32..(1u32 << m) {
        if mask & !allowed != 0 || mask.count_ones() as usize > problem.rb_budget {
            continue;
        }
        for (i, x) in u.iter_mut().enumerate() {
            *x = mask >> i & 1 == 1;
        }
        let value = problem.objective(&u);
        let better = match &best {
            None => true,
            Some((bv, bu)) => value < *bv || (value == *bv && tie_break_less(&u, bu)),
        };
        if better {
            best = Some((value, u.clone()));
        }
    }
    Ok(best.map(|(_, u)| u).unwrap_or_default())
}

fn tie_break_less(a: &[bool], b: &[bool]) -> bool {
    let count = |v: &[bool]| v.iter().filter(|&&x| x).count();
    let (ca, cb) = (count(a), count(b));
    if ca != cb {
        return ca < cb;
    }
    let ia = a.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i);
    let ib = b.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i);
    ia.lt(ib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(c1: &[f64], budget: usize) -> SelectionProblem {
        SelectionProblem {
            c1: c1.to_vec(),
            c2: vec![1.0; c1.len()],
            rb_budget: budget,
            has_packet: vec![true; c1.len()],
        }
    }

    const WEIGHTS: CostWeights = CostWeights {
        gamma_a: 0.5,
        gamma_e: 0.5,
        tx_power_w: 0.5,
        sampling_cost_j: 5e-4,
        slot_duration: 1.0,
    };

    #[test]
    fn coefficient_examples() {
        let inputs = DeviceInputs { device_aoi: 0.0, prev_bs_aoi: 4.0, sampled: true, expected_delay: 0.0 };
        assert_eq!(coefficients(&inputs, &WEIGHTS).0, -2.5);
        let boundary = DeviceInputs { device_aoi: 5.0, prev_bs_aoi: 4.0, sampled: false, expected_delay: 0.0 };
        assert_eq!(coefficients(&boundary, &WEIGHTS).0, 0.0);
    }

    #[test]
    fn coefficients_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let phi: f64 = rng.random_range(0.0..5.0);
            let bs: f64 = rng.random_range(0.0..5.0);
            let l: f64 = rng.random_range(0.0..1e-3);
            let s: bool = rng.random();
            let (c1, c2) = coefficients(
                &DeviceInputs { device_aoi: phi, prev_bs_aoi: bs, sampled: s, expected_delay: l },
                &WEIGHTS,
            );
            let e1 = 0.5 * (l + phi - bs - 1.0) + 0.5 * 0.5 * l;
            let e2 = 0.5 * if s { 5e-4 } else { 0.0 } + 0.5 * (bs + 1.0);
            assert!((c1 - e1).abs() < 1e-14 && (c2 - e2).abs() < 1e-14);
        }
    }

    #[test]
    fn nonnegative_coefficients_select_nothing() {
        assert_eq!(select(&problem(&[0.0, 1.0, 3.0], 2)).unwrap(), vec![false; 3]);
    }

    #[test]
    fn overflow_keeps_most_negative() {
        assert_eq!(select(&problem(&[-3.0, -1.0, -2.0], 2)).unwrap(), vec![true, false, true]);
    }

    #[test]
    fn devices_without_packets_are_skipped() {
        let mut p = problem(&[-3.0, -1.0, -2.0], 2);
        p.has_packet[0] = false;
        assert_eq!(select(&p).unwrap(), vec![false, true, true]);
        assert_eq!(brute_force_select(&p).unwrap(), vec![false, true, true]);
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_select(&problem(&[-0.1], 1)).unwrap(), vec![true]);
        assert_eq!(
            brute_force_select(&problem(&[-1.0; 4], 2)).unwrap(),
            vec![true, true, false, false]
        );
        assert!(matches!(
            brute_force_select(&problem(&[-1.0; 21], 2)),
            Err(Error::EnumerationBound { devices: 21, limit: 20 })
        ));
    }

    #[test]
    fn brute_force_beats_random_feasible_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let m = rng.random_range(1..=10);
            let p = SelectionProblem {
                c1: (0..m).map(|_| rng.random_range(-3.0..3.0)).collect(),
                c2: (0..m).map(|_| rng.random_range(0.0..3.0)).collect(),
                rb_budget: rng.random_range(1..=m),
                has_packet: (0..m).map(|_| rng.random_bool(0.8)).collect(),
            };
            let best = p.objective(&brute_force_select(&p).unwrap());
            for _ in 0..100 {
                let u: Vec<bool> = (0..m).map(|_| rng.random()).collect();
                if p.is_feasible(&u) {
                    assert!(best <= p.objective(&u));
                }
            }
        }
    }

    #[test]
    fn rejects_malformed_problems() {
        let mut p = problem(&[-1.0, 2.0], 1);
        p.c2.pop();
        assert!(select(&p).is_err());
        let mut p = problem(&[-1.0, 2.0], 1);
        p.rb_budget = 0;
        assert!(select(&p).is_err());
        let p = problem(&[f64::NAN, 2.0], 1);
        assert!(select(&p).is_err());
    }

    fn arb_problem() -> impl Strategy<Value = SelectionProblem> {
        (1usize..=12).prop_flat_map(|m| {
            (
                prop::collection::vec(-5.0f64..5.0, m),
                prop::collection::vec(0.0f64..5.0, m),
                1usize..=6,
                prop::collection::vec(prop::bool::weighted(0.8), m),
            )
                .prop_map(|(c1, c2, rb_budget, has_packet)| SelectionProblem { c1, c2, rb_budget, has_packet })
        })
    }

    proptest! {
        #[test]
        fn select_is_optimal_and_feasible(p in arb_problem()) {
            let u = select(&p).unwrap();
            prop_assert!(p.is_feasible(&u));
            let b = brute_force_select(&p).unwrap();
            prop_assert_eq!(p.objective(&u), p.objective(&b));
        }

        #[test]
        fn sign_rule_when_budget_suffices(p in arb_problem()) {
            let negatives = (0..p.devices()).filter(|&m| p.has_packet[m] && p.c1[m] < 0.0).count();
            prop_assume!(negatives <= p.rb_budget);
            let u = select(&p).unwrap();
            for m in 0..p.devices() {
                prop_assert_eq!(u[m], p.has_packet[m] && p.c1[m] < 0.0);
            }
        }

        #[test]
        fn positive_scaling_keeps_selection(p in arb_problem(), k in 0.01f64..100.0) {
            let mut q = p.clone();
            q.c1.iter_mut().for_each(|c| *c *= k);
            prop_assert_eq!(select(&p).unwrap(), select(&q).unwrap());
        }
    }
}
