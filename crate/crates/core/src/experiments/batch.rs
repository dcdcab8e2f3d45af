use std::ops::Range;

use rayon::prelude::*;

use super::metrics::{percentile, state_error, NodeErrorVector};
use super::{ExperimentError, AGGREGATE_PERCENTILE, DEFAULT_C, DEFAULT_ZERO_INJECTION_SIGMA};
use crate::estimator::{estimate, EstimatorOptions};
use crate::feeder::{build_admittance, AdmittanceMatrix, NetworkModel};
use crate::measurement::{attach_pseudo, attach_zero_injection, simulate_sensors, MeasurementSpec, SensorNoise};
use crate::power_flow::{solve_power_flow, InjectionVector, PowerFlowError, PowerFlowOptions, VoltageState};
use crate::profiles::{build_scenario, build_scenarios, normalize_pv, pseudo_stats, PseudoStats, Scenario, TimeSeries};
use crate::scalar::{real, to_f64, Real};

/// Everything a batch needs besides the window, sensors and seed.
#[derive(Debug, Clone)]
pub struct Study<T: Real> {
    pub model: NetworkModel,
    pub ybus: AdmittanceMatrix<T>,
    pub load: TimeSeries,
    pub pv_raw: TimeSeries,
    /// `pv_raw` rescaled to `pv_peak`.
    pub pv: TimeSeries,
    pub pv_peak: f64,
    pub c: f64,
    pub power_flow: PowerFlowOptions<T>,
    pub estimator: EstimatorOptions<T>,
    pub zero_injection_sigma: f64,
}

impl<T: Real> Study<T> {
    /// Default settings; the PV series is normalised to the peak of the
    /// load multiplier unless `pv_peak` is given.
    pub fn new(
        model: NetworkModel,
        load: TimeSeries,
        pv_raw: TimeSeries,
        pv_peak: Option<f64>,
    ) -> Result<Self, ExperimentError> {
        let ybus = build_admittance(&model)?;
        let pv_peak = pv_peak.unwrap_or_else(|| load.max());
        let pv = normalize_pv(&pv_raw, pv_peak)?;
        if pv.len() != load.len() {
            return Err(crate::profiles::ProfileError::LengthMismatch {
                load: load.len(),
                pv: pv.len(),
            }
            .into());
        }
        Ok(Self {
            model,
            ybus,
            load,
            pv_raw,
            pv,
            pv_peak,
            c: DEFAULT_C,
            power_flow: PowerFlowOptions::default(),
            estimator: EstimatorOptions::default(),
            zero_injection_sigma: DEFAULT_ZERO_INJECTION_SIGMA,
        })
    }

    pub fn with_pv_peak(mut self, pv_peak: f64) -> Result<Self, ExperimentError> {
        self.pv = normalize_pv(&self.pv_raw, pv_peak)?;
        self.pv_peak = pv_peak;
        Ok(self)
    }

    pub fn scenario(&self, k: usize, seed: u64) -> Result<Scenario<T>, ExperimentError> {
        Ok(build_scenario(k, &self.load, &self.pv, self.c, seed, &self.model)?)
    }

    pub fn scenarios(&self, window: Range<usize>, seed: u64) -> Result<Vec<Scenario<T>>, ExperimentError> {
        Ok(build_scenarios(window, &self.load, &self.pv, self.c, seed, &self.model)?)
    }

    /// Pseudo-measurement statistics over the whole profile (historical data).
    pub fn historical_stats(&self, seed: u64) -> Result<PseudoStats<T>, ExperimentError> {
        Ok(pseudo_stats(&self.scenarios(0..self.load.len(), seed)?)?)
    }

    /// Sample statistics over `window` only.
    pub fn window_stats(&self, window: Range<usize>, seed: u64) -> Result<PseudoStats<T>, ExperimentError> {
        Ok(pseudo_stats(&self.scenarios(window, seed)?)?)
    }

    /// Pseudo and zero-injection measurements for every non-reference node.
    pub(crate) fn pseudo_set(
        &self,
        sensors: crate::measurement::MeasurementSet<T>,
        stats: &PseudoStats<T>,
    ) -> Result<crate::measurement::MeasurementSet<T>, ExperimentError> {
        let with_loads = attach_pseudo(&sensors, stats, &self.model.loaded_nodes(), &self.ybus)?;
        Ok(attach_zero_injection(
            &with_loads,
            &self.model.unloaded_nodes(),
            real(self.zero_injection_sigma),
        )?)
    }
}

/// Seed of the sensor noise of scenario `k` (SplitMix64 finaliser).
pub fn scenario_noise_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed ^ (k as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A scenario and its load-flow solution.
#[derive(Debug, Clone)]
pub struct TruthCase<T: Real> {
    pub scenario: Scenario<T>,
    pub voltage: Result<VoltageState<T>, PowerFlowError>,
}

/// Solves the load flow of every scenario in `window`.
pub fn prepare_truth<T: Real>(
    study: &Study<T>,
    window: Range<usize>,
    seed: u64,
) -> Result<Vec<TruthCase<T>>, ExperimentError> {
    if window.is_empty() {
        return Err(ExperimentError::EmptyWindow);
    }
    let scenarios = study.scenarios(window, seed)?;
    Ok(scenarios
        .into_par_iter()
        .map(|scenario| {
            let voltage = solve_power_flow(&study.ybus, &scenario.injections(), &study.power_flow);
            TruthCase { scenario, voltage }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome<T: Real> {
    pub index: usize,
    /// `None` for flagged scenarios.
    pub errors: Option<NodeErrorVector<T>>,
    pub estimate: Option<VoltageState<T>>,
    pub converged: bool,
    pub iterations: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BatchResult<T: Real> {
    pub outcomes: Vec<ScenarioOutcome<T>>,
    pub pooled_p95: T,
    /// Number of pooled node errors.
    pub samples: usize,
    /// Scenarios excluded because the load flow or the estimator failed.
    pub flagged: usize,
}

impl<T: Real> BatchResult<T> {
    /// 95th percentile of the node errors of the nodes in `nodes`, pooled over scenarios.
    pub fn p95_over(&self, nodes: &[usize]) -> Result<T, ExperimentError> {
        let pooled: Vec<T> = self
            .outcomes
            .iter()
            .filter_map(|o| o.errors.as_ref())
            .flat_map(|e| nodes.iter().map(move |&i| e.0[i]))
            .collect();
        percentile(&pooled, AGGREGATE_PERCENTILE)
    }
}

/// Estimates every prepared truth case with the given sensors and
/// pseudo-measurement statistics.
pub fn evaluate_batch<T: Real>(
    study: &Study<T>,
    truths: &[TruthCase<T>],
    sensors: &[MeasurementSpec<T>],
    stats: &PseudoStats<T>,
    seed: u64,
) -> Result<BatchResult<T>, ExperimentError> {
    if truths.is_empty() {
        return Err(ExperimentError::EmptyWindow);
    }
    // Every scenario starts from the load flow at the pseudo-measurement means
    // (flat start if that load flow fails); the start only affects speed.
    let start = solve_power_flow(
        &study.ybus,
        &InjectionVector::from_loads(&stats.p_hat, &stats.q_hat),
        &study.power_flow,
    )
    .ok();
    let outcomes: Vec<ScenarioOutcome<T>> = truths
        .par_iter()
        .map(|case| -> Result<ScenarioOutcome<T>, ExperimentError> {
            let index = case.scenario.index;
            let truth = match &case.voltage {
                Ok(v) => v,
                Err(e) => {
                    return Ok(ScenarioOutcome {
                        index,
                        errors: None,
                        estimate: None,
                        converged: false,
                        iterations: 0,
                        failure: Some(e.to_string()),
                    })
                }
            };
            let noise = SensorNoise::Gaussian {
                seed: scenario_noise_seed(seed, index),
            };
            let measured = simulate_sensors(truth, sensors, &study.ybus, noise)?;
            let set = study.pseudo_set(measured, stats)?;
            let result = estimate(&study.ybus, &set, &study.estimator, start.as_ref())?;
            let (errors, failure) = if result.converged {
                (Some(state_error(truth, &result.v_hat)?), None)
            } else {
                (
                    None,
                    Some(format!(
                        "estimator stopped after {} iterations (objective {:.3e})",
                        result.iterations,
                        to_f64(result.objective)
                    )),
                )
            };
            Ok(ScenarioOutcome {
                index,
                errors,
                estimate: Some(result.v_hat),
                converged: result.converged,
                iterations: result.iterations,
                failure,
            })
        })
        .collect::<Result<_, _>>()?;

    let pooled: Vec<T> = outcomes
        .iter()
        .filter_map(|o| o.errors.as_ref())
        .flat_map(|e| e.0.iter().copied())
        .collect();
    let flagged = outcomes.iter().filter(|o| o.errors.is_none()).count();
    Ok(BatchResult {
        pooled_p95: percentile(&pooled, AGGREGATE_PERCENTILE)?,
        samples: pooled.len(),
        flagged,
        outcomes,
    })
}

/// Truth, measurement, estimation and error for every scenario in `window`.
pub fn run_batch<T: Real>(
    study: &Study<T>,
    window: Range<usize>,
    sensors: &[MeasurementSpec<T>],
    stats: &PseudoStats<T>,
    seed: u64,
) -> Result<BatchResult<T>, ExperimentError> {
    let truths = prepare_truth(study, window, seed)?;
    evaluate_batch(study, &truths, sensors, stats, seed)
}
