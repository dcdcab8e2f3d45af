use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use dsse_core::experiments::{
    coverage_groups_from_head, prepare_truth, run_batch, sweep_coverage, sweep_variance, Study, SweepManifest,
    SweepResult,
};
use dsse_core::measurement::{read_placement_file, resolve_placement, SensorRecord};
use dsse_core::power_flow::InjectionVector;
use dsse_core::profiles::load_profile_file;
use dsse_core::{load_feeder_file, solve_power_flow, MeasurementSpec, NetworkModel, VoltageState};

use crate::plot::{line_plot, Series};
use crate::{
    usage, Command, Common, CoverageArgs, EstimateArgs, PowerflowArgs, PseudoCovariance, ReportArgs, VarianceArgs,
};

/// Written next to every output set; `dsse report` reruns from it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: Command,
    /// Hours left out because the load flow or the estimator failed.
    pub flagged: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepManifest>,
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Powerflow(a) => powerflow(a),
        Command::Estimate(a) => estimate(a),
        Command::SweepVariance(a) => variance(a),
        Command::SweepCoverage(a) => coverage(a),
        Command::Report(a) => report(a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn study(common: &Common) -> Result<Study<f64>> {
    require_file(&common.feeder, "feeder")?;
    require_file(&common.load_profile, "load profile")?;
    require_file(&common.pv_profile, "PV profile")?;
    if !(common.c.is_finite() && common.c >= 0.0) {
        return Err(usage(format!("--c must be non-negative, got {}", common.c)));
    }
    if let Some(p) = common.pv_peak {
        if !(p.is_finite() && p >= 0.0) {
            return Err(usage(format!("--pv-peak must be non-negative, got {p}")));
        }
    }
    let model = load_feeder_file(&common.feeder)?;
    let load = load_profile_file(&common.load_profile, true)?;
    let pv = load_profile_file(&common.pv_profile, true)?;
    if common.window.end > load.len() {
        return Err(usage(format!("window {} exceeds the {} profile hours", common.window, load.len())));
    }
    let mut study = Study::new(model, load, pv, common.pv_peak)?;
    study.c = common.c;
    Ok(study)
}

fn sensor_records(arg: &str) -> Result<Vec<SensorRecord>> {
    if arg == "none" {
        return Ok(Vec::new());
    }
    let path = PathBuf::from(arg);
    require_file(&path, "sensor placement")?;
    Ok(read_placement_file(&path)?)
}

fn check_noise(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(usage("noise levels must be positive"));
    }
    Ok(())
}

fn seeds(first: u64, count: u64) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(usage("--reseeds must be at least 1"));
    }
    Ok((0..count).map(|k| first + k).collect())
}

fn node_labels(model: &NetworkModel) -> Vec<String> {
    model.node_map().iter().map(|n| n.to_string()).collect()
}

/// Writes a CSV with an `hour` column followed by one column per node.
fn write_node_table(path: &Path, model: &NetworkModel, rows: &[(usize, Option<Vec<f64>>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["hour".to_string()];
    header.extend(node_labels(model));
    w.write_record(&header)?;
    for (hour, values) in rows {
        let mut rec = vec![hour.to_string()];
        match values {
            Some(v) => rec.extend(v.iter().map(|x| x.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), model.node_count())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn out_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(&common.out)
}

fn manifest(command: Command, flagged: Vec<usize>, sweep: Option<SweepManifest>) -> Manifest {
    Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        flagged,
        sweep,
    }
}

fn powerflow(args: &PowerflowArgs) -> Result<()> {
    let study = study(&args.common)?;
    let window = args.common.window.start..args.common.window.end;
    let solved: Vec<(usize, Result<VoltageState<f64>, _>)> = if args.no_load {
        let zero = InjectionVector::zeros(study.model.node_count());
        window.map(|k| (k, solve_power_flow(&study.ybus, &zero, &study.power_flow))).collect()
    } else {
        prepare_truth(&study, window, args.common.seed)?
            .into_iter()
            .map(|t| (t.scenario.index, t.voltage))
            .collect()
    };
    let mut flagged = Vec::new();
    let mut magnitudes = Vec::new();
    let mut angles = Vec::new();
    for (hour, result) in &solved {
        match result {
            Ok(v) => {
                magnitudes.push((*hour, Some(v.magnitudes.iter().copied().collect())));
                angles.push((*hour, Some(v.angles.iter().copied().collect())));
            }
            Err(e) => {
                eprintln!("hour {hour}: {e}");
                flagged.push(*hour);
            }
        }
    }
    if !flagged.is_empty() && !args.skip_diverged {
        anyhow::bail!("load flow failed for {} hours (use --skip-diverged to continue)", flagged.len());
    }
    let dir = out_dir(&args.common)?;
    write_node_table(&dir.join("magnitudes.csv"), &study.model, &magnitudes)?;
    write_node_table(&dir.join("angles.csv"), &study.model, &angles)?;
    let labels = node_labels(&study.model);
    let series: Vec<Series> = labels
        .iter()
        .enumerate()
        .skip(study.model.reference_node_count())
        .map(|(i, label)| Series {
            label: label.clone(),
            points: magnitudes
                .iter()
                .filter_map(|(h, v)| v.as_ref().map(|v| (*h as f64, v[i])))
                .collect(),
        })
        .collect();
    let title = format!("{}: node voltage magnitudes", study.model.name);
    fs::write(dir.join("magnitudes.svg"), line_plot(&title, "hour of year", "|V| (p.u.)", &series))?;
    write_manifest(dir, &manifest(Command::Powerflow(args.clone()), flagged, None))?;
    println!("{} hours solved, written to {}", magnitudes.len(), dir.display());
    Ok(())
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    check_noise(&[args.noise])?;
    let records = sensor_records(&args.sensors)?;
    let study = study(&args.common)?;
    let specs: Vec<MeasurementSpec<f64>> = resolve_placement(&records, &study.model, args.noise, None)?;
    let c = &args.common;
    let window = c.window.start..c.window.end;
    let historical = study.historical_stats(c.seed)?;
    let stats = match args.pseudo_cov {
        PseudoCovariance::Year => historical,
        PseudoCovariance::Window => historical.with_covariance_of(&study.window_stats(window.clone(), c.seed)?),
    };
    let batch = run_batch(&study, window, &specs, &stats, c.seed)?;

    let dir = out_dir(c)?;
    let errors: Vec<(usize, Option<Vec<f64>>)> =
        batch.outcomes.iter().map(|o| (o.index, o.errors.as_ref().map(|e| e.0.clone()))).collect();
    let estimates = |f: fn(&VoltageState<f64>) -> Vec<f64>| -> Vec<(usize, Option<Vec<f64>>)> {
        batch
            .outcomes
            .iter()
            .map(|o| (o.index, o.estimate.as_ref().filter(|_| o.converged).map(f)))
            .collect()
    };
    write_node_table(&dir.join("node_errors.csv"), &study.model, &errors)?;
    write_node_table(
        &dir.join("estimated_magnitudes.csv"),
        &study.model,
        &estimates(|v| v.magnitudes.iter().copied().collect()),
    )?;
    write_node_table(
        &dir.join("estimated_angles.csv"),
        &study.model,
        &estimates(|v| v.angles.iter().copied().collect()),
    )?;

    let mut w = csv::Writer::from_path(dir.join("scenarios.csv"))?;
    w.write_record(["hour", "converged", "iterations", "max_error_percent", "failure"])?;
    for o in &batch.outcomes {
        let max = o.errors.as_ref().map(|e| e.max().to_string()).unwrap_or_default();
        w.write_record([
            o.index.to_string(),
            o.converged.to_string(),
            o.iterations.to_string(),
            max,
            o.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let mean_iter = batch.outcomes.iter().map(|o| o.iterations as f64).sum::<f64>() / batch.outcomes.len() as f64;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in [
        ("pooled_p95_percent", batch.pooled_p95.to_string()),
        ("samples", batch.samples.to_string()),
        ("scenarios", batch.outcomes.len().to_string()),
        ("flagged", batch.flagged.to_string()),
        ("mean_iterations", mean_iter.to_string()),
        ("sensors", specs.len().to_string()),
    ] {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;

    let flagged = batch.outcomes.iter().filter(|o| o.errors.is_none()).map(|o| o.index).collect();
    write_manifest(dir, &manifest(Command::Estimate(args.clone()), flagged, None))?;
    println!(
        "pooled p95 {:.4} % over {} scenarios ({} flagged), written to {}",
        batch.pooled_p95,
        batch.outcomes.len(),
        batch.flagged,
        dir.display()
    );
    Ok(())
}

fn inputs(common: &Common, sensors: Option<&str>) -> std::collections::BTreeMap<String, String> {
    let mut m = std::collections::BTreeMap::new();
    m.insert("feeder".into(), common.feeder.display().to_string());
    m.insert("load_profile".into(), common.load_profile.display().to_string());
    m.insert("pv_profile".into(), common.pv_profile.display().to_string());
    if let Some(s) = sensors {
        m.insert("sensors".into(), s.to_string());
    }
    m
}

fn write_sweep(dir: &Path, result: &SweepResult, title: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    let mut header = vec!["grid".to_string(), "noise".into(), "p95_percent".into(), "p95_std".into()];
    header.extend(result.manifest.seeds.iter().map(|s| format!("seed_{s}")));
    w.write_record(&header)?;
    for (g, x) in result.axis.iter().enumerate() {
        for (k, sigma) in result.noise_levels.iter().enumerate() {
            let mut rec = vec![
                x.to_string(),
                sigma.to_string(),
                result.p95[g][k].to_string(),
                result.p95_std[g][k].to_string(),
            ];
            rec.extend(result.replicates.iter().map(|r| r[g][k].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    let series: Vec<Series> = result
        .noise_levels
        .iter()
        .enumerate()
        .map(|(k, sigma)| Series {
            label: format!("noise {sigma}"),
            points: result.axis.iter().zip(&result.p95).map(|(&x, row)| (x, row[k])).collect(),
        })
        .collect();
    fs::write(
        dir.join("sweep.svg"),
        line_plot(title, &result.axis_label, "95th percentile node error (%)", &series),
    )?;
    Ok(())
}

fn variance(args: &VarianceArgs) -> Result<()> {
    check_noise(&args.noise)?;
    if args.grid.is_empty() || args.grid.iter().any(|d| !(d.is_finite() && *d > -100.0)) {
        return Err(usage("--grid deviations must exceed -100"));
    }
    if args.grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--grid must be strictly increasing"));
    }
    let records = sensor_records(&args.sensors)?;
    let study = study(&args.common)?;
    let c = &args.common;
    let seeds = seeds(c.seed, args.reseeds)?;
    let mut result = sweep_variance(&study, &args.grid, &args.noise, c.window.start..c.window.end, &records, &seeds)?;
    result.manifest.inputs = inputs(c, Some(&args.sensors));
    let dir = out_dir(c)?;
    write_sweep(dir, &result, &format!("{}: pseudo-measurement variance deviation", study.model.name))?;
    write_manifest(
        dir,
        &manifest(Command::SweepVariance(args.clone()), Vec::new(), Some(result.manifest.clone())),
    )?;
    println!("{} x {} table written to {}", result.axis.len(), result.noise_levels.len(), dir.display());
    Ok(())
}

fn coverage(args: &CoverageArgs) -> Result<()> {
    check_noise(&args.noise)?;
    if args.group_size == 0 {
        return Err(usage("--group-size must be at least 1"));
    }
    let study = study(&args.common)?;
    let c = &args.common;
    for bus in &args.skip {
        if study.model.bus(bus).is_none() {
            return Err(usage(format!("--skip: unknown bus {bus:?}")));
        }
    }
    let skip: Vec<&str> = args.skip.iter().map(String::as_str).collect();
    let mut groups = coverage_groups_from_head(&study.model, args.group_size, &skip);
    if let Some(n) = args.max_groups {
        groups.truncate(n);
    }
    let seeds = seeds(c.seed, args.reseeds)?;
    let mut result = sweep_coverage(&study, &groups, &args.noise, c.window.start..c.window.end, &seeds)?;
    result.manifest.inputs = inputs(c, None);
    let dir = out_dir(c)?;
    write_sweep(dir, &result, &format!("{}: sensor coverage from the feeder head", study.model.name))?;

    let mut w = csv::Writer::from_path(dir.join("groups.csv"))?;
    w.write_record(["group", "kind", "bus", "phase"])?;
    for (g, group) in groups.iter().enumerate() {
        for r in group {
            let kind = serde_json::to_value(r.kind)?;
            w.write_record([
                (g + 1).to_string(),
                kind.as_str().unwrap_or_default().to_string(),
                r.bus.clone(),
                r.phase.to_string(),
            ])?;
        }
    }
    w.flush()?;
    write_manifest(
        dir,
        &manifest(Command::SweepCoverage(args.clone()), Vec::new(), Some(result.manifest.clone())),
    )?;
    println!("{} groups written to {}", groups.len(), dir.display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    require_file(&args.manifest, "manifest")?;
    let text = fs::read_to_string(&args.manifest)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", args.manifest.display())))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    let mut command = manifest.command;
    match &mut command {
        Command::Powerflow(a) => a.common.out = out,
        Command::Estimate(a) => a.common.out = out,
        Command::SweepVariance(a) => a.common.out = out,
        Command::SweepCoverage(a) => a.common.out = out,
        Command::Report(_) => return Err(usage("manifest does not describe a run")),
    }
    run(&command)
}
