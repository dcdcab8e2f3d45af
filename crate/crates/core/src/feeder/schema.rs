//! On-disk feeder document.
//!
//! ```json
//! {
//!   "name": "two_bus",
//!   "base_kv": 1.0, "base_mva": 1.0,
//!   "reference_bus": "source", "reference_magnitude": 1.0,
//!   "buses": [{"name": "source", "phases": ["A"]}, {"name": "load", "phases": ["A"]}],
//!   "branches": [{"from": "source", "to": "load", "phases": ["A"],
//!                 "impedance": [[0.01, 0.02]]}],
//!   "loads": [{"bus": "load", "phase": "A", "p_kw": 100.0, "q_kvar": 50.0}]
//! }
//! ```
//!
//! Impedances are row-major `[re, im]` pairs in ohms, shunts in siemens.
//! Loads are per-phase kW / kvar.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::{Branch, Bus, FeederError, NetworkModel, NodeId, PhaseId};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederDocument {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub notes: Vec<String>,
    pub base_kv: f64,
    pub base_mva: f64,
    pub reference_bus: String,
    #[serde(default = "default_reference_magnitude")]
    pub reference_magnitude: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    #[serde(default)]
    pub loads: Vec<LoadRecord>,
}

fn default_reference_magnitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub name: String,
    pub phases: Vec<PhaseId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    #[serde(default)]
    pub name: Option<String>,
    pub from: String,
    pub to: String,
    pub phases: Vec<PhaseId>,
    pub impedance: Vec<[f64; 2]>,
    #[serde(default)]
    pub shunt: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRecord {
    pub bus: String,
    pub phase: PhaseId,
    pub p_kw: f64,
    pub q_kvar: f64,
}

fn invalid(msg: impl Into<String>) -> FeederError {
    FeederError::Invalid(msg.into())
}

fn sorted_phases(phases: &[PhaseId], owner: &str) -> Result<Vec<PhaseId>, FeederError> {
    let mut out = phases.to_vec();
    out.sort();
    out.dedup();
    if out.len() != phases.len() {
        return Err(invalid(format!("{owner}: duplicate phase")));
    }
    if out.is_empty() {
        return Err(invalid(format!("{owner}: no phases")));
    }
    Ok(out)
}

/// Builds a k x k matrix from row-major pairs, reordered so rows follow
/// sorted phase order.
fn block(
    pairs: &[[f64; 2]],
    declared: &[PhaseId],
    sorted: &[PhaseId],
    scale: f64,
    owner: &str,
    what: &str,
) -> Result<DMatrix<Complex<f64>>, FeederError> {
    let k = declared.len();
    if pairs.len() != k * k {
        return Err(invalid(format!(
            "{owner}: {what} has {} entries, expected {} for {k} phase(s)",
            pairs.len(),
            k * k
        )));
    }
    if pairs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{owner}: {what} has a non-finite entry")));
    }
    let pos: Vec<usize> = sorted
        .iter()
        .map(|p| declared.iter().position(|d| d == p).unwrap())
        .collect();
    Ok(DMatrix::from_fn(k, k, |r, c| {
        let [re, im] = pairs[pos[r] * k + pos[c]];
        Complex::new(re * scale, im * scale)
    }))
}

impl FeederDocument {
    pub fn into_model(self) -> Result<NetworkModel, FeederError> {
        if !(self.base_kv > 0.0 && self.base_mva > 0.0) {
            return Err(invalid("base_kv and base_mva must be positive"));
        }
        if !(self.reference_magnitude > 0.0) {
            return Err(invalid("reference_magnitude must be positive"));
        }

        let mut buses = Vec::with_capacity(self.buses.len());
        let mut seen = HashSet::new();
        for rec in &self.buses {
            if !seen.insert(rec.name.clone()) {
                return Err(invalid(format!("bus {:?} declared twice", rec.name)));
            }
            buses.push(Bus {
                name: rec.name.clone(),
                phases: sorted_phases(&rec.phases, &format!("bus {:?}", rec.name))?,
                is_reference: rec.name == self.reference_bus,
            });
        }
        let reference = buses
            .iter()
            .find(|b| b.is_reference)
            .cloned()
            .ok_or_else(|| invalid(format!("reference bus {:?} is not declared", self.reference_bus)))?;
        for bus in &buses {
            if let Some(p) = bus.phases.iter().find(|p| !reference.has_phase(**p)) {
                return Err(invalid(format!(
                    "bus {:?} has phase {p} which the reference bus lacks",
                    bus.name
                )));
            }
        }
        let by_name: HashMap<&str, &Bus> = buses.iter().map(|b| (b.name.as_str(), b)).collect();

        // Node ordering: reference bus first, then document order.
        let mut node_map = Vec::new();
        for bus in std::iter::once(&reference).chain(buses.iter().filter(|b| !b.is_reference)) {
            for &phase in &bus.phases {
                node_map.push(NodeId {
                    index: node_map.len(),
                    bus: bus.name.clone(),
                    phase,
                });
            }
        }
        let node_index: HashMap<(String, PhaseId), usize> = node_map
            .iter()
            .map(|n| ((n.bus.clone(), n.phase), n.index))
            .collect();

        let z_base = self.base_kv * self.base_kv / self.base_mva;
        let mut branches = Vec::with_capacity(self.branches.len());
        for (i, rec) in self.branches.iter().enumerate() {
            let name = rec
                .name
                .clone()
                .unwrap_or_else(|| format!("{}-{}", rec.from, rec.to));
            let owner = format!("branch {name:?} (#{i})");
            for end in [&rec.from, &rec.to] {
                if !by_name.contains_key(end.as_str()) {
                    return Err(invalid(format!("{owner} references unknown bus {end:?}")));
                }
            }
            if rec.from == rec.to {
                return Err(invalid(format!("{owner} connects a bus to itself")));
            }
            let phases = sorted_phases(&rec.phases, &owner)?;
            for end in [&rec.from, &rec.to] {
                if let Some(p) = phases.iter().find(|p| !by_name[end.as_str()].has_phase(**p)) {
                    return Err(invalid(format!("{owner}: phase {p} is missing at bus {end:?}")));
                }
            }
            let series = block(&rec.impedance, &rec.phases, &phases, 1.0 / z_base, &owner, "impedance")?;
            if series.clone().try_inverse().is_none() {
                return Err(FeederError::SingularImpedance { branch: name });
            }
            let k = phases.len();
            let shunt = match &rec.shunt {
                Some(pairs) => block(pairs, &rec.phases, &phases, z_base, &owner, "shunt")?,
                None => DMatrix::zeros(k, k),
            };
            branches.push(Branch {
                name,
                from_bus: rec.from.clone(),
                to_bus: rec.to.clone(),
                phases,
                series_impedance: series,
                shunt_admittance: shunt,
            });
        }

        // Every node must reach a reference node through branches carrying its phase.
        let mut reached = vec![false; node_map.len()];
        let mut queue: VecDeque<usize> = (0..reference.phases.len()).collect();
        for &i in &queue {
            reached[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            let node = &node_map[i];
            for br in &branches {
                if !br.phases.contains(&node.phase) {
                    continue;
                }
                let other = if br.from_bus == node.bus {
                    &br.to_bus
                } else if br.to_bus == node.bus {
                    &br.from_bus
                } else {
                    continue;
                };
                let j = node_index[&(other.clone(), node.phase)];
                if !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        let orphans: Vec<String> = node_map
            .iter()
            .filter(|n| !reached[n.index])
            .map(|n| n.to_string())
            .collect();
        if !orphans.is_empty() {
            return Err(invalid(format!(
                "nodes not connected to the reference bus: {}",
                orphans.join(", ")
            )));
        }

        let phase_base_kva = 1000.0 * self.base_mva / reference.phases.len() as f64;
        let mut nominal_load = vec![Complex::new(0.0, 0.0); node_map.len()];
        for rec in &self.loads {
            let owner = format!("load at {}.{}", rec.bus, rec.phase);
            let bus = by_name
                .get(rec.bus.as_str())
                .ok_or_else(|| invalid(format!("{owner} references unknown bus")))?;
            if !bus.has_phase(rec.phase) {
                return Err(invalid(format!("{owner}: bus lacks that phase")));
            }
            if bus.is_reference {
                return Err(invalid(format!("{owner}: loads are not allowed on the reference bus")));
            }
            if !(rec.p_kw.is_finite() && rec.q_kvar.is_finite()) {
                return Err(invalid(format!("{owner}: non-finite value")));
            }
            let i = node_index[&(rec.bus.clone(), rec.phase)];
            nominal_load[i] += Complex::new(rec.p_kw, rec.q_kvar) / phase_base_kva;
        }

        Ok(NetworkModel {
            name: self.name,
            reference_nodes: reference.phases.len(),
            buses,
            branches,
            nominal_load,
            base_kv: self.base_kv,
            base_mva: self.base_mva,
            reference_magnitude: self.reference_magnitude,
            node_map,
            node_index,
        })
    }
}
