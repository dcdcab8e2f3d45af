//! Distribution-system state estimation.
//!
//! The crate reconstructs the complex node voltages of a multi-phase feeder
//! from a sparse set of sensors plus forecast-derived pseudo-measurements by
//! solving a box-constrained weighted-least-squares problem, and ships the
//! scenario machinery and sensitivity studies built around it.
//!
//! All numerical kernels are generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! command-line driver uses.

pub mod bundled;
pub mod estimator;
pub mod experiments;
pub mod feeder;
pub mod measurement;
pub mod power_flow;
pub mod profiles;
pub mod scalar;

pub use scalar::Real;

pub use estimator::{estimate, flat_start, objective, EstimationResult, EstimatorError, EstimatorOptions};
pub use feeder::{
    build_admittance, load_feeder, load_feeder_file, node_lookup, AdmittanceMatrix, NetworkModel, NodeId,
    PhaseId,
};
pub use measurement::{MeasurementKind, MeasurementSet, MeasurementSpec};
pub use power_flow::{power_mismatch, solve_power_flow, PowerFlowOptions, VoltageState};
pub use profiles::{build_scenario, pseudo_stats, PseudoStats, Scenario, TimeSeries};

pub type AdmittanceMatrix64 = AdmittanceMatrix<f64>;
pub type VoltageState64 = VoltageState<f64>;
pub type MeasurementSet64 = MeasurementSet<f64>;
pub type MeasurementSpec64 = MeasurementSpec<f64>;
pub type Scenario64 = Scenario<f64>;
pub type PseudoStats64 = PseudoStats<f64>;
pub type EstimatorOptions64 = EstimatorOptions<f64>;
pub type EstimationResult64 = EstimationResult<f64>;
pub type PowerFlowOptions64 = PowerFlowOptions<f64>;

pub type AdmittanceMatrix32 = AdmittanceMatrix<f32>;
pub type VoltageState32 = VoltageState<f32>;
pub type MeasurementSet32 = MeasurementSet<f32>;
pub type EstimatorOptions32 = EstimatorOptions<f32>;
pub type PowerFlowOptions32 = PowerFlowOptions<f32>;
