//! Error metric, batch evaluation and the sensitivity sweeps.
//!
//! A batch takes a window of scenarios, solves the load flow of each one to
//! get the true state, measures it with the sensor set, adds load
//! pseudo-measurements (plus zero-injection measurements at unloaded nodes),
//! estimates, and pools the per-node percentage errors of all converged
//! scenarios before taking the 95th percentile.

mod batch;
mod metrics;
mod sweep;

use std::ops::Range;

use thiserror::Error;

use crate::estimator::EstimatorError;
use crate::feeder::FeederError;
use crate::measurement::MeasurementError;
use crate::power_flow::PowerFlowError;
use crate::profiles::ProfileError;

pub use batch::{
    evaluate_batch, prepare_truth, run_batch, scenario_noise_seed, BatchResult, ScenarioOutcome, Study, TruthCase,
};
pub use metrics::{node_error, percentile, state_error, NodeErrorVector};
pub use sweep::{
    coverage_groups_from_head, rerun, sweep_coverage, sweep_variance, EstimatorRecord, SweepKind, SweepManifest,
    SweepResult,
};

/// Hours 4344..4512 of the bundled year: the first week of July.
pub const SUMMER_WEEK: Range<usize> = 4344..4512;

pub const DEFAULT_C: f64 = 0.05;
pub const DEFAULT_NOISE: f64 = 0.005;
pub const DEFAULT_NOISE_LEVELS: [f64; 3] = [0.001, 0.005, 0.01];
pub const DEFAULT_DELTAS: [f64; 7] = [-75.0, -50.0, -25.0, 0.0, 50.0, 100.0, 200.0];
pub const DEFAULT_ZERO_INJECTION_SIGMA: f64 = 1e-4;
pub const AGGREGATE_PERCENTILE: f64 = 95.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("node {node}: true voltage magnitude is zero")]
    ZeroMagnitude { node: usize },
    #[error("no samples to aggregate")]
    NoSamples,
    #[error("scenario window is empty")]
    EmptyWindow,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}
