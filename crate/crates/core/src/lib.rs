//! Age-of-information aware sampling and uplink scheduling for monitored
//! nonlinear processes, with multi-agent value-decomposition learning.

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod marl;
pub mod metrics;
pub mod neural;
pub mod radio;
pub mod rng;
pub mod selector;

pub use error::{Error, Result};
