//! Sensor placement files.
//!
//! CSV with a header row `kind,bus,phase,sigma`:
//!
//! ```text
//! kind,bus,phase,sigma
//! vmag,8,A,
//! vang,8,A,0.005
//! ibranch,632-670,B,0.01
//! ```
//!
//! `kind` is one of `vmag`, `vang`, `pinj`, `iinj`, `ibranch`, `ibranch_mag`.
//! For branch kinds the `bus` column holds the branch name. An empty
//! `sigma` takes the run's noise level.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MeasurementError, MeasurementKind, MeasurementSpec};
use crate::feeder::{node_lookup, NetworkModel, PhaseId};
use crate::scalar::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Vmag,
    Vang,
    Pinj,
    Iinj,
    Ibranch,
    IbranchMag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRecord {
    pub kind: SensorKind,
    pub bus: String,
    pub phase: PhaseId,
    pub sigma: Option<f64>,
}

pub fn read_placement(text: &str) -> Result<Vec<SensorRecord>, MeasurementError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SensorRecord>().enumerate() {
        let rec = rec.map_err(|e| MeasurementError::Placement {
            row: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
            message: e.to_string(),
        })?;
        if let Some(s) = rec.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(MeasurementError::Placement {
                    row: i + 2,
                    message: format!("sigma must be positive, got {s}"),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_placement_file(path: impl AsRef<Path>) -> Result<Vec<SensorRecord>, MeasurementError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MeasurementError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_placement(&text)
}

/// Maps placement records onto measurement specs. `default_sigma` fills in
/// records without a sigma; `override_sigma` replaces every sigma (used by
/// noise sweeps).
pub fn resolve_placement<T: Real>(
    records: &[SensorRecord],
    model: &NetworkModel,
    default_sigma: f64,
    override_sigma: Option<f64>,
) -> Result<Vec<MeasurementSpec<T>>, MeasurementError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let kind = match rec.kind {
            SensorKind::Ibranch | SensorKind::IbranchMag => {
                let branch = model
                    .branches
                    .iter()
                    .position(|b| b.name == rec.bus)
                    .ok_or_else(|| MeasurementError::Placement {
                        row: 0,
                        message: format!("unknown branch {:?}", rec.bus),
                    })?;
                if !model.branches[branch].phases.contains(&rec.phase) {
                    return Err(MeasurementError::PhaseNotOnBranch {
                        index: out.len(),
                        branch: rec.bus.clone(),
                        phase: rec.phase,
                    });
                }
                if rec.kind == SensorKind::Ibranch {
                    MeasurementKind::BranchCurrentPhasor { branch, phase: rec.phase }
                } else {
                    MeasurementKind::BranchCurrentMagnitude { branch, phase: rec.phase }
                }
            }
            kind => {
                let node = node_lookup(model, &rec.bus, rec.phase)?.index;
                match kind {
                    SensorKind::Vmag => MeasurementKind::VoltageMagnitude { node },
                    SensorKind::Vang => MeasurementKind::VoltageAngle { node },
                    SensorKind::Pinj => MeasurementKind::PowerInjection { node },
                    _ => MeasurementKind::CurrentInjectionPhasor { node },
                }
            }
        };
        if !seen.insert(kind) {
            return Err(MeasurementError::DuplicateSensor(format!(
                "{:?} at {}.{}",
                rec.kind, rec.bus, rec.phase
            )));
        }
        let sigma = override_sigma.or(rec.sigma).unwrap_or(default_sigma);
        out.push(MeasurementSpec::sensor(kind, real(sigma)));
    }
    Ok(out)
}
