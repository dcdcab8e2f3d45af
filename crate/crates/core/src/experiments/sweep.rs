use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::batch::{evaluate_batch, prepare_truth, Study};
use super::ExperimentError;
use crate::estimator::EstimatorOptions;
use crate::feeder::{NetworkModel, PhaseId};
use crate::measurement::{resolve_placement, SensorKind, SensorRecord};
use crate::power_flow::PowerFlowOptions;
use crate::profiles::PseudoStats;
use crate::scalar::{real, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Variance,
    Coverage,
}

/// Solver settings as plain numbers, for manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRecord {
    pub v_min: f64,
    pub v_max: f64,
    pub tol_grad: f64,
    pub tol_step: f64,
    pub max_iter: usize,
    pub damping_init: f64,
    pub power_flow_tol: f64,
    pub power_flow_max_iter: usize,
    pub zero_injection_sigma: f64,
}

impl EstimatorRecord {
    pub fn from_study<T: Real>(study: &Study<T>) -> Self {
        let e = &study.estimator;
        Self {
            v_min: to_f64(e.v_min),
            v_max: to_f64(e.v_max),
            tol_grad: to_f64(e.tol_grad),
            tol_step: to_f64(e.tol_step),
            max_iter: e.max_iter,
            damping_init: to_f64(e.damping_init),
            power_flow_tol: to_f64(study.power_flow.tol),
            power_flow_max_iter: study.power_flow.max_iter,
            zero_injection_sigma: study.zero_injection_sigma,
        }
    }

    pub fn apply<T: Real>(&self, study: &mut Study<T>) {
        study.estimator = EstimatorOptions {
            v_min: real(self.v_min),
            v_max: real(self.v_max),
            tol_grad: real(self.tol_grad),
            tol_step: real(self.tol_step),
            max_iter: self.max_iter,
            damping_init: real(self.damping_init),
        };
        study.power_flow = PowerFlowOptions {
            tol: real(self.power_flow_tol),
            max_iter: self.power_flow_max_iter,
        };
        study.zero_injection_sigma = self.zero_injection_sigma;
    }
}

/// Everything needed to rerun a sweep, apart from the input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub kind: SweepKind,
    pub feeder: String,
    pub c: f64,
    pub pv_peak: f64,
    pub window: [usize; 2],
    pub seeds: Vec<u64>,
    pub noise_levels: Vec<f64>,
    /// Variance deviations in percent, or cumulative sensor-group counts.
    pub grid: Vec<f64>,
    /// Fixed sensor set of a variance sweep.
    #[serde(default)]
    pub sensors: Vec<SensorRecord>,
    /// Placement order of a coverage sweep.
    #[serde(default)]
    pub groups: Vec<Vec<SensorRecord>>,
    pub settings: EstimatorRecord,
    /// Scenarios excluded over all cells and replicates.
    pub flagged: usize,
    /// Input file locations, filled in by the command-line driver.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis_label: String,
    /// Variance deviation (%) or number of sensor locations.
    pub axis: Vec<f64>,
    pub noise_levels: Vec<f64>,
    /// Mean over replicates, indexed `[grid][noise]`.
    pub p95: Vec<Vec<f64>>,
    /// Sample standard deviation over replicates (0 for a single replicate).
    pub p95_std: Vec<Vec<f64>>,
    /// Indexed `[replicate][grid][noise]`.
    pub replicates: Vec<Vec<Vec<f64>>>,
    pub manifest: SweepManifest,
}

fn check_noise(levels: &[f64]) -> Result<(), ExperimentError> {
    if levels.is_empty() || levels.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(ExperimentError::InvalidGrid("noise levels must be positive".into()));
    }
    Ok(())
}

fn summarise(replicates: &[Vec<Vec<f64>>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = replicates.len() as f64;
    let rows = replicates[0].len();
    let cols = replicates[0][0].len();
    let mut mean = vec![vec![0.0; cols]; rows];
    let mut std = vec![vec![0.0; cols]; rows];
    for g in 0..rows {
        for s in 0..cols {
            let m = replicates.iter().map(|r| r[g][s]).sum::<f64>() / n;
            mean[g][s] = m;
            if replicates.len() > 1 {
                let var = replicates.iter().map(|r| (r[g][s] - m).powi(2)).sum::<f64>() / (n - 1.0);
                std[g][s] = var.sqrt();
            }
        }
    }
    (mean, std)
}

fn base_manifest<T: Real>(
    study: &Study<T>,
    kind: SweepKind,
    window: &Range<usize>,
    seeds: &[u64],
    noise_levels: &[f64],
) -> SweepManifest {
    SweepManifest {
        kind,
        feeder: study.model.name.clone(),
        c: study.c,
        pv_peak: study.pv_peak,
        window: [window.start, window.end],
        seeds: seeds.to_vec(),
        noise_levels: noise_levels.to_vec(),
        grid: Vec::new(),
        sensors: Vec::new(),
        groups: Vec::new(),
        settings: EstimatorRecord::from_study(study),
        flagged: 0,
        inputs: BTreeMap::new(),
    }
}

/// Pooled p95 as the pseudo-measurement covariance deviates from the
/// sample covariance of the window: `Sigma = (1 + delta/100) Sigma_sample`.
/// Means come from the historical (full-profile) statistics.
pub fn sweep_variance<T: Real>(
    study: &Study<T>,
    deltas: &[f64],
    noise_levels: &[f64],
    window: Range<usize>,
    sensors: &[SensorRecord],
    seeds: &[u64],
) -> Result<SweepResult, ExperimentError> {
    if deltas.is_empty() || deltas.iter().any(|d| !(d.is_finite() && *d > -100.0)) {
        return Err(ExperimentError::InvalidGrid("variance deviations must exceed -100%".into()));
    }
    if deltas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::InvalidGrid("variance deviations must be strictly increasing".into()));
    }
    check_noise(noise_levels)?;
    if seeds.is_empty() {
        return Err(ExperimentError::InvalidGrid("at least one seed is required".into()));
    }
    let specs_per_noise = noise_levels
        .iter()
        .map(|&s| resolve_placement::<T>(sensors, &study.model, s, Some(s)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut flagged = 0;
    let mut replicates = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let truths = prepare_truth(study, window.clone(), seed)?;
        let historical = study.historical_stats(seed)?;
        let sample = study.window_stats(window.clone(), seed)?;
        let base = historical.with_covariance_of(&sample);
        let mut table = Vec::with_capacity(deltas.len());
        for &delta in deltas {
            let stats = base.with_scaled_covariance(real(1.0 + delta / 100.0));
            let mut row = Vec::with_capacity(noise_levels.len());
            for specs in &specs_per_noise {
                let batch = evaluate_batch(study, &truths, specs, &stats, seed)?;
                flagged += batch.flagged;
                row.push(to_f64(batch.pooled_p95));
            }
            table.push(row);
        }
        replicates.push(table);
    }
    let (p95, p95_std) = summarise(&replicates);
    let mut manifest = base_manifest(study, SweepKind::Variance, &window, seeds, noise_levels);
    manifest.grid = deltas.to_vec();
    manifest.sensors = sensors.to_vec();
    manifest.flagged = flagged;
    Ok(SweepResult {
        axis_label: "pseudo-measurement variance deviation (%)".into(),
        axis: deltas.to_vec(),
        noise_levels: noise_levels.to_vec(),
        p95,
        p95_std,
        replicates,
        manifest,
    })
}

fn location_count(records: &[SensorRecord]) -> usize {
    records
        .iter()
        .map(|r| (r.bus.as_str(), r.phase))
        .collect::<HashSet<_>>()
        .len()
}

/// Pooled p95 as sensor groups are added one after the other, starting from
/// the pseudo-measurement-only baseline. Uses historical statistics.
pub fn sweep_coverage<T: Real>(
    study: &Study<T>,
    groups: &[Vec<SensorRecord>],
    noise_levels: &[f64],
    window: Range<usize>,
    seeds: &[u64],
) -> Result<SweepResult, ExperimentError> {
    check_noise(noise_levels)?;
    if seeds.is_empty() {
        return Err(ExperimentError::InvalidGrid("at least one seed is required".into()));
    }
    // Cumulative sets; resolving also rejects duplicate locations.
    let mut cumulative: Vec<Vec<SensorRecord>> = vec![Vec::new()];
    for g in groups {
        let mut next = cumulative.last().unwrap().clone();
        next.extend(g.iter().cloned());
        cumulative.push(next);
    }
    let specs: Vec<Vec<_>> = cumulative
        .iter()
        .map(|records| {
            noise_levels
                .iter()
                .map(|&s| resolve_placement::<T>(records, &study.model, s, Some(s)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let axis: Vec<f64> = cumulative.iter().map(|r| location_count(r) as f64).collect();

    let mut flagged = 0;
    let mut replicates = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let truths = prepare_truth(study, window.clone(), seed)?;
        let stats: PseudoStats<T> = study.historical_stats(seed)?;
        let mut table = Vec::with_capacity(specs.len());
        for per_noise in &specs {
            let mut row = Vec::with_capacity(noise_levels.len());
            for s in per_noise {
                let batch = evaluate_batch(study, &truths, s, &stats, seed)?;
                flagged += batch.flagged;
                row.push(to_f64(batch.pooled_p95));
            }
            table.push(row);
        }
        replicates.push(table);
    }
    let (p95, p95_std) = summarise(&replicates);
    let mut manifest = base_manifest(study, SweepKind::Coverage, &window, seeds, noise_levels);
    manifest.grid = axis.clone();
    manifest.groups = groups.to_vec();
    manifest.flagged = flagged;
    Ok(SweepResult {
        axis_label: "sensor locations".into(),
        axis,
        noise_levels: noise_levels.to_vec(),
        p95,
        p95_std,
        replicates,
        manifest,
    })
}

/// Magnitude + angle sensor groups of `group_size` nodes each, walking the
/// buses breadth-first from the reference bus. Buses in `skip` are left out.
pub fn coverage_groups_from_head(model: &NetworkModel, group_size: usize, skip: &[&str]) -> Vec<Vec<SensorRecord>> {
    let reference = model.reference_bus().name.clone();
    let nodes: Vec<(String, PhaseId)> = model
        .buses_from_head()
        .into_iter()
        .filter(|b| *b != reference && !skip.contains(&b.as_str()))
        .flat_map(|b| {
            let phases = model.bus(&b).map(|x| x.phases.clone()).unwrap_or_default();
            phases.into_iter().map(move |p| (b.clone(), p))
        })
        .collect();
    nodes
        .chunks(group_size.max(1))
        .map(|chunk| {
            chunk
                .iter()
                .flat_map(|(bus, phase)| {
                    [SensorKind::Vmag, SensorKind::Vang].map(|kind| SensorRecord {
                        kind,
                        bus: bus.clone(),
                        phase: *phase,
                        sigma: None,
                    })
                })
                .collect()
        })
        .collect()
}

/// Reruns a sweep from its manifest against the same feeder and profiles.
pub fn rerun<T: Real>(study: &Study<T>, manifest: &SweepManifest) -> Result<SweepResult, ExperimentError> {
    let mut study = study.clone().with_pv_peak(manifest.pv_peak)?;
    study.c = manifest.c;
    manifest.settings.apply(&mut study);
    let window = manifest.window[0]..manifest.window[1];
    let mut result = match manifest.kind {
        SweepKind::Variance => sweep_variance(
            &study,
            &manifest.grid,
            &manifest.noise_levels,
            window,
            &manifest.sensors,
            &manifest.seeds,
        ),
        SweepKind::Coverage => sweep_coverage(&study, &manifest.groups, &manifest.noise_levels, window, &manifest.seeds),
    }?;
    result.manifest.inputs = manifest.inputs.clone();
    Ok(result)
}
