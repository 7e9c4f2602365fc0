//! Experiment orchestration: configuration, single runs, sweeps and trace fitting.

pub mod config;
pub mod run;
pub mod selftest;
pub mod sweep;
pub mod trace;

pub use config::{builtin_catalog, load_config, save_config, DynamicsSpec, ExperimentConfig, NonlinearitySpec};
pub use run::{read_artifact, run_experiment, RunResult, RunSummary, LOSS_COLUMNS};
pub use sweep::{pareto_sweep, parse_grid, run_sweep, AggregateRow, Stat, SweepAxis, SweepReport};
pub use trace::{fit_trace, FitKind, TraceFit, TraceSource};
pub use selftest::{run_selftest, CheckOutcome, SelftestScale};
