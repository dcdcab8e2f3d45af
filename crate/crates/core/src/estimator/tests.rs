use std::f64::consts::PI;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use super::*;
use crate::bundled;
use crate::feeder::{build_admittance, load_feeder_file, NetworkModel, PhaseId};
use crate::measurement::{
    attach_pseudo, attach_zero_injection, composite_h, simulate_sensors, voltage_sensors, MeasurementKind,
    MeasurementSpec, SensorNoise,
};
use crate::power_flow::{solve_power_flow, InjectionVector, PowerFlowOptions};
use crate::profiles::PseudoStats;

fn feeder(file: &str) -> (NetworkModel, AdmittanceMatrix<f64>) {
    let m = load_feeder_file(bundled::feeder(file)).unwrap();
    let y = build_admittance(&m).unwrap();
    (m, y)
}

fn nominal(m: &NetworkModel) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_iterator(m.node_count(), m.nominal_load.iter().map(|s| s.re)),
        DVector::from_iterator(m.node_count(), m.nominal_load.iter().map(|s| s.im)),
    )
}

fn truth(m: &NetworkModel, y: &AdmittanceMatrix<f64>) -> VoltageState<f64> {
    let (p, q) = nominal(m);
    solve_power_flow(y, &InjectionVector::from_loads(&p, &q), &PowerFlowOptions::default()).unwrap()
}

fn all_nodes(y: &AdmittanceMatrix<f64>) -> Vec<usize> {
    (y.reference_node_count()..y.dim()).collect()
}

fn max_phasor_error(a: &VoltageState<f64>, b: &VoltageState<f64>) -> f64 {
    (a.phasors() - b.phasors()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Pseudo-measurements centred on the nominal loads plus zero injections.
fn pseudo_only(m: &NetworkModel, y: &AdmittanceMatrix<f64>, var: f64) -> MeasurementSet<f64> {
    let (p, q) = nominal(m);
    let n = m.node_count();
    let stats = PseudoStats {
        p_hat: p,
        q_hat: q,
        sigma_p: DMatrix::from_diagonal_element(n, n, var),
        sigma_q: DMatrix::from_diagonal_element(n, n, var),
    };
    let set = attach_pseudo(&MeasurementSet::new(), &stats, &m.loaded_nodes(), y).unwrap();
    attach_zero_injection(&set, &m.unloaded_nodes(), 1e-4).unwrap()
}

#[test]
fn objective_vanishes_at_truth() {
    let (m, y) = feeder(bundled::CASE33);
    let v = truth(&m, &y);
    let set = simulate_sensors(&v, &voltage_sensors(&all_nodes(&y), 0.01), &y, SensorNoise::None).unwrap();
    assert!(objective(&v, &set, &y).unwrap() < 1e-20);
}

#[test]
fn objective_of_one_sigma_residual_is_one() {
    let (_, y) = feeder(bundled::CASE33);
    let v = flat_start(&y);
    let mut set = MeasurementSet::new();
    set.push(MeasurementSpec::sensor(MeasurementKind::VoltageMagnitude { node: 4 }, 0.1), &[1.1])
        .unwrap();
    assert_relative_eq!(objective(&v, &set, &y).unwrap(), 1.0, max_relative = 1e-12);
}

#[test]
fn objective_matches_naive_weighted_sum() {
    let (m, y) = feeder(bundled::IEEE13);
    let v = truth(&m, &y);
    let mut set = pseudo_only(&m, &y, 2e-4);
    set.push(MeasurementSpec::sensor(MeasurementKind::VoltageMagnitude { node: 7 }, 0.004), &[1.0])
        .unwrap();
    set.push(MeasurementSpec::sensor(MeasurementKind::VoltageAngle { node: 7 }, 0.003), &[-0.05])
        .unwrap();
    let h = composite_h(&v, &set, &y).unwrap();
    let mut naive = 0.0;
    let mut at = 0;
    for spec in set.specs() {
        for c in 0..spec.components() {
            let mut r = h[at] - set.z()[at];
            if matches!(spec.kind, MeasurementKind::VoltageAngle { .. }) {
                r = (r + PI).rem_euclid(2.0 * PI) - PI;
            }
            naive += r * r / (spec.sigma[c] * spec.sigma[c]);
            at += 1;
        }
    }
    assert_relative_eq!(objective(&v, &set, &y).unwrap(), naive, max_relative = 1e-12);
}

#[test]
fn noiseless_full_coverage_recovers_truth() {
    for file in [bundled::TWO_BUS, bundled::CASE33, bundled::IEEE13] {
        let (m, y) = feeder(file);
        let v = truth(&m, &y);
        let set = simulate_sensors(&v, &voltage_sensors(&all_nodes(&y), 0.005), &y, SensorNoise::None).unwrap();
        let res = estimate(&y, &set, &EstimatorOptions::default(), None).unwrap();
        assert!(res.converged, "{file}");
        let err = max_phasor_error(&res.v_hat, &v);
        assert!(err < 1e-6, "{file}: error {err:e}");
    }
}

#[test]
fn pseudo_measurements_alone_reproduce_load_flow() {
    for file in [bundled::CASE33, bundled::IEEE13] {
        let (m, y) = feeder(file);
        let v = truth(&m, &y);
        let set = pseudo_only(&m, &y, 1e-4);
        let res = estimate(&y, &set, &EstimatorOptions::default(), None).unwrap();
        assert!(res.converged, "{file}");
        let err = max_phasor_error(&res.v_hat, &v);
        assert!(err < 1e-4, "{file}: error {err:e}");
        assert!(res.active_bounds.is_empty());
    }
}

#[test]
fn flat_start_uses_reference_phasors() {
    let (m, y) = feeder(bundled::IEEE13);
    let v = flat_start(&y);
    for node in m.node_map() {
        assert_eq!(v.magnitudes[node.index], 1.05);
        let expected = match node.phase {
            PhaseId::A => 0.0,
            PhaseId::B => -2.0 * PI / 3.0,
            PhaseId::C => 2.0 * PI / 3.0,
        };
        assert_relative_eq!(v.angles[node.index], expected, epsilon = 1e-15);
    }
    let (_, y33) = feeder(bundled::CASE33);
    let v = flat_start(&y33);
    assert!(v.magnitudes.iter().all(|&x| x == 1.0));
    assert!(v.angles.iter().all(|&x| x == 0.0));
}

#[test]
fn objective_trace_never_increases() {
    let (m, y) = feeder(bundled::IEEE13);
    let v = truth(&m, &y);
    let specs = voltage_sensors(&[5, 10, 20], 0.005);
    let sensors = simulate_sensors(&v, &specs, &y, SensorNoise::Gaussian { seed: 3 }).unwrap();
    let mut set = pseudo_only(&m, &y, 1e-3);
    for (spec, (_, _, z)) in sensors.specs().iter().zip(sensors.describe()) {
        set.push(*spec, &z).unwrap();
    }
    let res = estimate(&y, &set, &EstimatorOptions::default(), None).unwrap();
    assert!(res.converged);
    assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*res.objective_trace.last().unwrap(), res.objective);
}

#[test]
fn gradient_matches_finite_differences() {
    let (m, y) = feeder(bundled::CASE33);
    let mut v = truth(&m, &y);
    for i in 1..y.dim() {
        v.magnitudes[i] += 0.002 * (i % 5) as f64;
        v.angles[i] -= 0.001 * (i % 3) as f64;
    }
    let mut set = pseudo_only(&m, &y, 1e-3);
    set.push(MeasurementSpec::sensor(MeasurementKind::VoltageMagnitude { node: 10 }, 0.01), &[0.95])
        .unwrap();
    let g = objective_gradient(&v, &set, &y).unwrap();
    let x = v.free_vector(1);
    let h = 1e-7;
    for c in 0..x.len() {
        let (mut plus, mut minus) = (v.clone(), v.clone());
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[c] += h;
        xm[c] -= h;
        plus.set_free(1, &xp);
        minus.set_free(1, &xm);
        let fd = (objective(&plus, &set, &y).unwrap() - objective(&minus, &set, &y).unwrap()) / (2.0 * h);
        assert!((g[c] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "column {c}: {} vs {fd}", g[c]);
    }
}

#[test]
fn scaling_every_covariance_leaves_estimate_unchanged() {
    let (m, y) = feeder(bundled::CASE33);
    let v = truth(&m, &y);
    let sensors = simulate_sensors(&v, &voltage_sensors(&[7, 8, 11, 24], 0.005), &y, SensorNoise::Gaussian { seed: 1 })
        .unwrap();
    let mut set = pseudo_only(&m, &y, 1e-3);
    for (spec, (_, _, z)) in sensors.specs().iter().zip(sensors.describe()) {
        set.push(*spec, &z).unwrap();
    }
    let mut scaled = set.clone();
    scaled.scale_covariance(100.0);
    let opts = EstimatorOptions::default();
    let a = estimate(&y, &set, &opts, None).unwrap();
    let b = estimate(&y, &scaled, &opts, None).unwrap();
    assert!(a.converged && b.converged);
    assert!(max_phasor_error(&a.v_hat, &b.v_hat) < 1e-8);
    assert_relative_eq!(a.objective, 100.0 * b.objective, max_relative = 1e-6);
}

#[test]
fn magnitude_box_is_respected() {
    let (m, y) = feeder(bundled::CASE33);
    let set = pseudo_only(&m, &y, 1e-4);
    let opts = EstimatorOptions {
        v_min: 0.95,
        ..EstimatorOptions::default()
    };
    let res = estimate(&y, &set, &opts, None).unwrap();
    assert!(res.v_hat.magnitudes.iter().all(|&x| x >= 0.95));
    // The nominal solution drops to about 0.913 at the feeder end.
    assert!(!res.active_bounds.is_empty());
    assert!(res.converged);
    for n in &res.active_bounds {
        assert_eq!(res.v_hat.magnitudes[n.index], 0.95, "{n:?}");
    }
}

#[test]
fn single_precision_smoke() {
    let m = load_feeder_file(bundled::feeder(bundled::CASE33)).unwrap();
    let y32: AdmittanceMatrix<f32> = build_admittance(&m).unwrap();
    let y64 = build_admittance::<f64>(&m).unwrap();
    let v64 = truth(&m, &y64);
    let v32 = VoltageState {
        magnitudes: v64.magnitudes.map(|x| x as f32),
        angles: v64.angles.map(|x| x as f32),
    };
    let nodes: Vec<usize> = (1..33).collect();
    let set = simulate_sensors(&v32, &voltage_sensors(&nodes, 0.005f32), &y32, SensorNoise::None).unwrap();
    let opts = EstimatorOptions::<f32> {
        tol_grad: 1e-4,
        tol_step: 1e-6,
        ..EstimatorOptions::default()
    };
    let res = estimate(&y32, &set, &opts, None).unwrap();
    let worst = (0..33)
        .map(|i| (res.v_hat.magnitudes[i] - v32.magnitudes[i]).abs())
        .fold(0.0f32, f32::max);
    assert!(worst < 1e-4, "f32 error {worst}");
}

#[test]
fn invalid_options_are_rejected() {
    let (_, y) = feeder(bundled::TWO_BUS);
    let set = MeasurementSet::new();
    let bad = [
        EstimatorOptions {
            v_min: 1.2,
            ..EstimatorOptions::default()
        },
        EstimatorOptions {
            tol_grad: 0.0,
            ..EstimatorOptions::default()
        },
        EstimatorOptions {
            max_iter: 0,
            ..EstimatorOptions::default()
        },
    ];
    for opts in bad {
        assert!(matches!(estimate(&y, &set, &opts, None), Err(EstimatorError::InvalidOptions(_))));
    }
    let short = VoltageState {
        magnitudes: DVector::from_element(1, 1.0),
        angles: DVector::zeros(1),
    };
    assert!(matches!(
        estimate(&y, &set, &EstimatorOptions::default(), Some(&short)),
        Err(EstimatorError::Dimension { expected: 2, got: 1 })
    ));
}

#[test]
fn warm_start_keeps_reference_fixed() {
    let (m, y) = feeder(bundled::CASE33);
    let v = truth(&m, &y);
    let mut init = v.clone();
    init.magnitudes[0] = 0.5;
    let set = pseudo_only(&m, &y, 1e-4);
    let res = estimate(&y, &set, &EstimatorOptions::default(), Some(&init)).unwrap();
    assert_eq!(res.v_hat.magnitudes[0], 1.0);
    assert!(max_phasor_error(&res.v_hat, &v) < 1e-4);
}

