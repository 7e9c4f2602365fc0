use crate::error::Result;
use crate::rng::StreamRng;

use super::{SamplingStrategy, StepContext, Transition};

/// Fixed-period sampling with staggered phases so that the expected number
/// of requests per slot matches the RB budget.
#[derive(Debug, Clone)]
pub struct UniformStrategy {
    devices: usize,
    period: u64,
}

impl UniformStrategy {
    pub fn new(devices: usize, rb_count: usize) -> Self {
        let period = devices.div_ceil(rb_count.max(1)).max(1) as u64;
        Self { devices, period }
    }

    pub fn period(&self) -> u64 {
        self.period
    }
}

impl SamplingStrategy for UniformStrategy {
    fn name(&self) -> &str {
        "uniform"
    }

    fn act(&mut self, ctx: &StepContext<'_>, _rng: &mut StreamRng) -> Result<Vec<bool>> {
        Ok((0..self.devices as u64)
            .map(|m| ctx.slot % self.period == m % self.period)
            .collect())
    }

    fn record(&mut self, _transition: Transition) {}

    fn train(&mut self, _rng: &mut StreamRng) -> Result<Option<f64>> {
        Ok(None)
    }

    fn learns(&self) -> bool {
        false
    }
}
