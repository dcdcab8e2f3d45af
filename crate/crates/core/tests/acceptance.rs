//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; the process fails if any check does.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsse_core::bundled;
use dsse_core::experiments::{
    coverage_groups_from_head, run_batch, sweep_coverage, sweep_variance, Study, SweepResult,
    DEFAULT_DELTAS, DEFAULT_NOISE, DEFAULT_NOISE_LEVELS, SUMMER_WEEK,
};
use dsse_core::measurement::{
    attach_pseudo, attach_zero_injection, composite_h, jacobian_h, read_placement_file, resolve_placement,
    simulate_sensors, voltage_sensors, SensorNoise,
};
use dsse_core::power_flow::InjectionVector;
use dsse_core::profiles::{build_scenarios, load_profile_file, PseudoStats, TimeSeries};
use dsse_core::{
    build_admittance, estimate, load_feeder_file, power_mismatch, pseudo_stats, solve_power_flow, AdmittanceMatrix,
    EstimatorOptions, MeasurementKind, MeasurementSet, MeasurementSpec, NetworkModel, PowerFlowOptions, VoltageState,
};

const FEEDERS: [&str; 3] = [bundled::CASE33, bundled::IEEE13, bundled::TWO_BUS];
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        println!("criterion {id:<3} [{}] {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(id.to_string());
        }
    }
}

fn feeder(file: &str) -> (NetworkModel, AdmittanceMatrix<f64>) {
    let m = load_feeder_file(bundled::feeder(file)).unwrap();
    let y = build_admittance(&m).unwrap();
    (m, y)
}

fn study(file: &str) -> Study<f64> {
    let (model, _) = feeder(file);
    let load = load_profile_file(bundled::data(bundled::LOAD_MULTIPLIER), true).unwrap();
    let pv = load_profile_file(bundled::data(bundled::PV_PROFILE), true).unwrap();
    Study::new(model, load, pv, None).unwrap()
}

fn nominal_truth(m: &NetworkModel, y: &AdmittanceMatrix<f64>) -> VoltageState<f64> {
    let p = DVector::from_iterator(m.node_count(), m.nominal_load.iter().map(|s| s.re));
    let q = DVector::from_iterator(m.node_count(), m.nominal_load.iter().map(|s| s.im));
    solve_power_flow(y, &InjectionVector::from_loads(&p, &q), &PowerFlowOptions::default()).unwrap()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Largest magnitude and angle differences between two states.
fn state_gap(a: &VoltageState<f64>, b: &VoltageState<f64>) -> (f64, f64) {
    let mag = (&a.magnitudes - &b.magnitudes).amax();
    let ang = a
        .angles
        .iter()
        .zip(b.angles.iter())
        .map(|(&x, &y)| angle_gap(x, y))
        .fold(0.0, f64::max);
    (mag, ang)
}

fn full_recovery(r: &mut Report) {
    let start = Instant::now();
    let mut worst: (f64, f64) = (0.0, 0.0);
    for file in FEEDERS {
        let (m, y) = feeder(file);
        let truth = nominal_truth(&m, &y);
        let nodes: Vec<usize> = (y.reference_node_count()..y.dim()).collect();
        let set = simulate_sensors(&truth, &voltage_sensors(&nodes, 0.005), &y, SensorNoise::None).unwrap();
        let res = estimate(&y, &set, &EstimatorOptions::default(), None).unwrap();
        let (dm, da) = state_gap(&truth, &res.v_hat);
        worst = (worst.0.max(dm), worst.1.max(da));
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "1",
        worst.0 < 1e-6 && worst.1 < 1e-6 && secs < 5.0,
        format!(
            "noiseless full coverage, 3 feeders: max |dV| {:.1e} p.u., max dtheta {:.1e} rad (< 1e-6), {secs:.2} s (< 5)",
            worst.0, worst.1
        ),
    );
}

/// Every measurement kind at every node and branch phase.
fn all_kinds(y: &AdmittanceMatrix<f64>) -> MeasurementSet<f64> {
    let mut set = MeasurementSet::new();
    let mut push = |kind: MeasurementKind| {
        set.push(MeasurementSpec::sensor(kind, 0.01), &vec![0.0; kind.components()]).unwrap();
    };
    for node in 0..y.dim() {
        push(MeasurementKind::VoltageMagnitude { node });
        push(MeasurementKind::VoltageAngle { node });
        push(MeasurementKind::PowerInjection { node });
        push(MeasurementKind::CurrentInjectionPhasor { node });
    }
    for (branch, br) in y.branches.iter().enumerate() {
        for &phase in &br.phases {
            push(MeasurementKind::BranchCurrentPhasor { branch, phase });
            push(MeasurementKind::BranchCurrentMagnitude { branch, phase });
        }
    }
    set
}

fn finite_difference(y: &AdmittanceMatrix<f64>, set: &MeasurementSet<f64>, v: &VoltageState<f64>) -> DMatrix<f64> {
    let nref = y.reference_node_count();
    let x = v.free_vector(nref);
    let h = 1e-6;
    let mut fd = DMatrix::zeros(set.dim(), x.len());
    let mut probe = v.clone();
    for c in 0..x.len() {
        let mut xp = x.clone();
        xp[c] += h;
        probe.set_free(nref, &xp);
        let up = composite_h(&probe, set, y).unwrap();
        xp[c] -= 2.0 * h;
        probe.set_free(nref, &xp);
        let down = composite_h(&probe, set, y).unwrap();
        fd.set_column(c, &((up - down) / (2.0 * h)));
    }
    fd
}

fn jacobian_check(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for file in [bundled::CASE33, bundled::IEEE13] {
        let (_, y) = feeder(file);
        let set = all_kinds(&y);
        for _ in 0..20 {
            let mut v = VoltageState::flat(&y);
            for i in y.reference_node_count()..y.dim() {
                v.magnitudes[i] = rng.random_range(0.9..1.1);
                v.angles[i] += rng.random_range(-0.2..0.2);
            }
            let j = jacobian_h(&v, &set, &y).unwrap();
            let fd = finite_difference(&y, &set, &v);
            // Measurement angles wrap; no sampled state sits near the cut.
            let err = (&j - &fd).amax() / fd.amax().max(1.0);
            worst = worst.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "2",
        worst < 1e-5 && secs < 30.0,
        format!("analytic vs central-difference Jacobian, 2 feeders x 20 states: relative error {worst:.1e} (< 1e-5), {secs:.1} s (< 30)"),
    );
}

fn pseudo_only(m: &NetworkModel, y: &AdmittanceMatrix<f64>, stats: &PseudoStats<f64>, zi: f64) -> MeasurementSet<f64> {
    let set = attach_pseudo(&MeasurementSet::new(), stats, &m.loaded_nodes(), y).unwrap();
    attach_zero_injection(&set, &m.unloaded_nodes(), zi).unwrap()
}

fn power_flow_consistency(r: &mut Report) {
    let mut mismatch: f64 = 0.0;
    let mut failures = 0;
    let mut states = 0;
    let mut gap: f64 = 0.0;
    for file in [bundled::CASE33, bundled::IEEE13] {
        let s = study(file);
        let scenarios = build_scenarios::<f64>(0..s.load.len(), &s.load, &s.pv, s.c, 1, &s.model).unwrap();
        for sc in &scenarios {
            let inj = sc.injections();
            match solve_power_flow(&s.ybus, &inj, &s.power_flow) {
                Ok(v) => {
                    states += 1;
                    mismatch = mismatch.max(power_mismatch(&s.ybus, &v, &inj).amax());
                }
                Err(_) => failures += 1,
            }
        }
        let stats = pseudo_stats(&scenarios).unwrap();
        let at_mean = solve_power_flow(
            &s.ybus,
            &InjectionVector::from_loads(&stats.p_hat, &stats.q_hat),
            &s.power_flow,
        )
        .unwrap();
        let set = pseudo_only(&s.model, &s.ybus, &stats, s.zero_injection_sigma);
        let res = estimate(&s.ybus, &set, &s.estimator, None).unwrap();
        let (dm, da) = state_gap(&at_mean, &res.v_hat);
        gap = gap.max(dm).max(da);
    }
    r.line(
        "3a",
        failures == 0 && mismatch < 1e-8,
        format!("{states} yearly truth states (2 feeders), {failures} load-flow failures, max |S - V (YV)*| {mismatch:.1e} (< 1e-8)"),
    );
    r.line(
        "3b",
        gap < 1e-4,
        format!("pseudo-only estimate vs load flow at the pseudo means: max gap {gap:.1e} (< 1e-4)"),
    );
}

fn summer_week(r: &mut Report) {
    let start = Instant::now();
    let s = study(bundled::CASE33);
    let records = read_placement_file(bundled::sensors(bundled::CASE33_SENSORS)).unwrap();
    let specs = resolve_placement(&records, &s.model, DEFAULT_NOISE, None).unwrap();
    let stats = s.historical_stats(1).unwrap();
    let batch = run_batch(&s, SUMMER_WEEK, &specs, &stats, 1).unwrap();
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "4",
        batch.pooled_p95 < 2.0 && batch.flagged == 0 && secs < 600.0,
        format!(
            "33-bus, {} summer-week scenarios, sensors at 8/9/12/25, noise {DEFAULT_NOISE}: pooled p95 {:.3} % (< 2.0), {} flagged, {secs:.1} s",
            SUMMER_WEEK.len(),
            batch.pooled_p95,
            batch.flagged
        ),
    );
}

fn combined(a: f64, b: f64) -> f64 {
    2.0 * (a * a + b * b).sqrt()
}

fn fmt_row(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn variance_trend(r: &mut Report, name: &str, sweep: &SweepResult) {
    let idx = |d: f64| sweep.axis.iter().position(|&x| x == d).unwrap();
    let (lo, hi) = (idx(-50.0), idx(100.0));
    for (k, sigma) in sweep.noise_levels.iter().enumerate() {
        let col: Vec<f64> = sweep.p95.iter().map(|row| row[k]).collect();
        let std: Vec<f64> = sweep.p95_std.iter().map(|row| row[k]).collect();
        let endpoints = col[lo] > col[hi];
        let rises: Vec<String> = (1..col.len())
            .filter(|&g| col[g] - col[g - 1] > combined(std[g], std[g - 1]))
            .map(|g| format!("{:+}->{:+}", sweep.axis[g - 1], sweep.axis[g]))
            .collect();
        r.line(
            "5",
            endpoints && rises.is_empty(),
            format!(
                "{name}, noise {sigma}: p95(-50%) {:.3} vs p95(+100%) {:.3}; rises beyond 2 std: [{}]; p95 over grid [{}]",
                col[lo],
                col[hi],
                rises.join(", "),
                fmt_row(&col)
            ),
        );
    }
}

fn noise_ordering(r: &mut Report, name: &str, sweep: &SweepResult) {
    let mut breaks = Vec::new();
    for (g, (row, std)) in sweep.p95.iter().zip(&sweep.p95_std).enumerate() {
        for k in 1..row.len() {
            if row[k - 1] - row[k] > combined(std[k - 1], std[k]) {
                breaks.push(format!("{:+}% ({} > {})", sweep.axis[g], sweep.noise_levels[k - 1], sweep.noise_levels[k]));
            }
        }
    }
    r.line(
        "6",
        breaks.is_empty(),
        format!(
            "{name}: p95 non-decreasing in sensor noise at every variance deviation; violations [{}]",
            breaks.join(", ")
        ),
    );
}

fn variance_sweeps(r: &mut Report) -> Vec<(String, SweepResult)> {
    let mut out = Vec::new();
    for (file, sensors, name) in [
        (bundled::CASE33, bundled::CASE33_SENSORS, "33-bus"),
        (bundled::IEEE13, bundled::IEEE13_SENSORS, "13-bus"),
    ] {
        let start = Instant::now();
        let s = study(file);
        let records = read_placement_file(bundled::sensors(sensors)).unwrap();
        let sweep = sweep_variance(&s, &DEFAULT_DELTAS, &DEFAULT_NOISE_LEVELS, SUMMER_WEEK, &records, &SEEDS).unwrap();
        println!(
            "    {name} variance sweep over {} seeds, {} flagged, {:.0} s",
            SEEDS.len(),
            sweep.manifest.flagged,
            start.elapsed().as_secs_f64()
        );
        variance_trend(r, name, &sweep);
        out.push((name.to_string(), sweep));
    }
    out
}

fn coverage_drop(r: &mut Report) {
    for (file, size, skip, named, name, flat) in [
        (bundled::CASE33, 2, &[][..], "2", "33-bus", false),
        (bundled::IEEE13, 3, &["sourcebus"][..], "632", "13-bus", true),
    ] {
        let start = Instant::now();
        let s = study(file);
        let groups = coverage_groups_from_head(&s.model, size, skip);
        let at = groups.iter().position(|g| g.iter().any(|rec| rec.bus == named)).unwrap();
        let sweep = sweep_coverage(&s, &groups, &DEFAULT_NOISE_LEVELS, SUMMER_WEEK, &SEEDS[..1]).unwrap();
        println!(
            "    {name} coverage sweep, {} groups of {size} nodes, {:.0} s",
            groups.len(),
            start.elapsed().as_secs_f64()
        );
        for (k, sigma) in sweep.noise_levels.iter().enumerate() {
            let drops: Vec<f64> = (0..groups.len()).map(|i| sweep.p95[i][k] - sweep.p95[i + 1][k]).collect();
            let largest = (0..drops.len()).max_by(|&a, &b| drops[a].total_cmp(&drops[b])).unwrap();
            let mut ok = largest == at;
            let mut detail = format!(
                "{name}, noise {sigma}: drop at the group with bus {named} {:.3}, largest drop {:.3} (group {} of {})",
                drops[at],
                drops[largest],
                largest + 1,
                drops.len()
            );
            if flat {
                let later = drops[at + 1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                ok &= later < 0.25 * drops[at];
                detail.push_str(&format!("; largest later drop {later:.3} (< {:.3})", 0.25 * drops[at]));
            }
            detail.push_str(&format!("; p95 [{}]", fmt_row(&sweep.p95.iter().map(|row| row[k]).collect::<Vec<_>>())));
            r.line("7", ok, detail);
        }
    }
}

/// Mean, then unbiased covariance from the centred samples.
fn two_pass(xs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = xs.len() as f64;
    let m = xs[0].len();
    let mean = xs.iter().fold(DVector::zeros(m), |a, b| a + b) / n;
    let mut cov = DMatrix::zeros(m, m);
    for x in xs {
        let d = x - &mean;
        cov += &d * d.transpose();
    }
    (mean, cov / (n - 1.0))
}

fn scenario_machinery(r: &mut Report) {
    let s = study(bundled::IEEE13);
    let year = build_scenarios::<f64>(0..s.load.len(), &s.load, &s.pv, s.c, 9, &s.model).unwrap();
    r.line("8a", year.len() == 8760, format!("yearlong profiles give {} scenarios (8760)", year.len()));

    let stats = pseudo_stats(&year).unwrap();
    let p: Vec<DVector<f64>> = year.iter().map(|sc| sc.p.clone()).collect();
    let q: Vec<DVector<f64>> = year.iter().map(|sc| sc.q.clone()).collect();
    let (p_mean, p_cov) = two_pass(&p);
    let (q_mean, q_cov) = two_pass(&q);
    let worst = [
        (&stats.p_hat - p_mean).amax(),
        (&stats.q_hat - q_mean).amax(),
        (&stats.sigma_p - p_cov).amax(),
        (&stats.sigma_q - q_cov).amax(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    r.line(
        "8b",
        worst < 1e-10,
        format!("streaming mean/covariance vs two-pass oracle over a year: max difference {worst:.1e} (< 1e-10)"),
    );

    let dark: Vec<f64> = vec![0.0; s.load.len()];
    let no_pv = TimeSeries::hourly("dark", dark);
    let without = build_scenarios::<f64>(0..s.load.len(), &s.load, &no_pv, s.c, 9, &s.model).unwrap();
    let same_q = year.iter().zip(&without).all(|(a, b)| a.q == b.q);
    let p_moves = year.iter().zip(&without).any(|(a, b)| a.p != b.p);
    r.line(
        "8c",
        same_q && p_moves,
        "reactive demand identical with and without solar for all 8760 hours (active demand does change)".into(),
    );
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this
    // target skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let start = Instant::now();
    let mut r = Report { failed: Vec::new() };
    full_recovery(&mut r);
    jacobian_check(&mut r);
    power_flow_consistency(&mut r);
    summer_week(&mut r);
    let sweeps = variance_sweeps(&mut r);
    for (name, sweep) in &sweeps {
        noise_ordering(&mut r, name, sweep);
    }
    coverage_drop(&mut r);
    scenario_machinery(&mut r);
    println!("acceptance finished in {:.0} s", start.elapsed().as_secs_f64());
    if !r.failed.is_empty() {
        let mut ids = r.failed.clone();
        ids.dedup();
        println!("failed criteria: {}", ids.join(", "));
        std::process::exit(1);
    }
}
