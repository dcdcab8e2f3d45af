//! Multi-phase feeder description and node admittance matrix.
//!
//! A feeder is a set of buses, each energised on one to three phases, joined
//! by branches that carry a subset of those phases. Every energised
//! `(bus, phase)` pair is a *node*; the reference bus nodes come first in the
//! node ordering so the free state of the estimator is a contiguous block.

mod schema;
mod ybus;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schema::{BranchRecord, BusRecord, FeederDocument, LoadRecord};
pub use ybus::{build_admittance, AdmittanceMatrix, BranchAdmittance};

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("feeder document parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cannot read feeder file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid feeder: {0}")]
    Invalid(String),
    #[error("branch {branch}: series impedance is singular")]
    SingularImpedance { branch: String },
    #[error("unknown bus {0:?}")]
    UnknownBus(String),
    #[error("bus {bus:?} has no phase {phase}")]
    MissingPhase { bus: String, phase: PhaseId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseId {
    A,
    B,
    C,
}

impl PhaseId {
    pub const ALL: [PhaseId; 3] = [PhaseId::A, PhaseId::B, PhaseId::C];

    /// Angle of this phase in the balanced reference set: 0, -120 and +120 degrees.
    pub fn reference_angle(self) -> f64 {
        match self {
            PhaseId::A => 0.0,
            PhaseId::B => -2.0 * std::f64::consts::FRAC_PI_3,
            PhaseId::C => 2.0 * std::f64::consts::FRAC_PI_3,
        }
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PhaseId::A => "A",
            PhaseId::B => "B",
            PhaseId::C => "C",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PhaseId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" | "1" => Ok(PhaseId::A),
            "B" | "b" | "2" => Ok(PhaseId::B),
            "C" | "c" | "3" => Ok(PhaseId::C),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub name: String,
    /// Sorted, duplicate free.
    pub phases: Vec<PhaseId>,
    pub is_reference: bool,
}

impl Bus {
    pub fn has_phase(&self, phase: PhaseId) -> bool {
        self.phases.contains(&phase)
    }
}

/// A series branch between two buses. Impedances are per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub name: String,
    pub from_bus: String,
    pub to_bus: String,
    pub phases: Vec<PhaseId>,
    pub series_impedance: DMatrix<Complex<f64>>,
    /// Total shunt admittance of the branch; half is placed at each end.
    pub shunt_admittance: DMatrix<Complex<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeId {
    pub index: usize,
    pub bus: String,
    pub phase: PhaseId,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.bus, self.phase)
    }
}

/// Validated, per-unit feeder model. Immutable once built.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub name: String,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    /// Nominal per-node apparent power drawn by loads (load-positive), per-unit.
    pub nominal_load: Vec<Complex<f64>>,
    pub base_kv: f64,
    pub base_mva: f64,
    pub reference_magnitude: f64,
    node_map: Vec<NodeId>,
    node_index: HashMap<(String, PhaseId), usize>,
    reference_nodes: usize,
}

impl NetworkModel {
    /// Total number of nodes `M`.
    pub fn node_count(&self) -> usize {
        self.node_map.len()
    }

    /// Number of reference-bus nodes; they occupy indices `0..reference_node_count()`.
    pub fn reference_node_count(&self) -> usize {
        self.reference_nodes
    }

    pub fn node_map(&self) -> &[NodeId] {
        &self.node_map
    }

    pub fn reference_bus(&self) -> &Bus {
        self.buses
            .iter()
            .find(|b| b.is_reference)
            .expect("validated model has a reference bus")
    }

    pub fn bus(&self, name: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.name == name)
    }

    /// Base impedance in ohms.
    pub fn base_impedance(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    /// Per-phase power base in kVA. A single-phase equivalent model uses the
    /// full three-phase base; a three-phase model splits it over the phases.
    pub fn phase_power_base_kva(&self) -> f64 {
        1000.0 * self.base_mva / self.reference_bus().phases.len() as f64
    }

    /// Reference phasor magnitude and angle of a node, if it is a reference node.
    pub fn reference_phasor(&self, index: usize) -> Option<(f64, f64)> {
        (index < self.reference_nodes).then(|| {
            (
                self.reference_magnitude,
                self.node_map[index].phase.reference_angle(),
            )
        })
    }

    /// Nodes that carry a nonzero nominal load, excluding reference nodes.
    pub fn loaded_nodes(&self) -> Vec<usize> {
        (self.reference_nodes..self.node_count())
            .filter(|&i| self.nominal_load[i] != Complex::new(0.0, 0.0))
            .collect()
    }

    /// Non-reference nodes without any nominal load.
    pub fn unloaded_nodes(&self) -> Vec<usize> {
        (self.reference_nodes..self.node_count())
            .filter(|&i| self.nominal_load[i] == Complex::new(0.0, 0.0))
            .collect()
    }

    /// Nodes of a bus, in phase order.
    pub fn bus_nodes(&self, bus: &str) -> Vec<usize> {
        PhaseId::ALL
            .iter()
            .filter_map(|&p| self.node_index.get(&(bus.to_string(), p)).copied())
            .collect()
    }

    /// Bus names in breadth-first order from the reference bus. Neighbours are
    /// visited in branch order, which makes the ordering deterministic.
    pub fn buses_from_head(&self) -> Vec<String> {
        let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
        for br in &self.branches {
            adjacency.entry(&br.from_bus).or_default().push(&br.to_bus);
            adjacency.entry(&br.to_bus).or_default().push(&br.from_bus);
        }
        let start = self.reference_bus().name.as_str();
        let mut order = vec![start.to_string()];
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(bus) = queue.pop_front() {
            for &next in adjacency.get(bus).map(Vec::as_slice).unwrap_or(&[]) {
                if !order.iter().any(|b| b == next) {
                    order.push(next.to_string());
                    queue.push_back(next);
                }
            }
        }
        order
    }
}

/// Reads and validates a feeder document from disk.
pub fn load_feeder_file(path: impl AsRef<Path>) -> Result<NetworkModel, FeederError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FeederError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_feeder(&text)
}

/// Parses a feeder document (JSON, see [`FeederDocument`]) and validates it.
pub fn load_feeder(source: &str) -> Result<NetworkModel, FeederError> {
    let doc: FeederDocument = serde_json::from_str(source).map_err(|e| FeederError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    doc.into_model()
}

/// Looks up the node index of `(bus, phase)`.
pub fn node_lookup(model: &NetworkModel, bus: &str, phase: PhaseId) -> Result<NodeId, FeederError> {
    match model.node_index.get(&(bus.to_string(), phase)) {
        Some(&i) => Ok(model.node_map[i].clone()),
        None if model.bus(bus).is_none() => Err(FeederError::UnknownBus(bus.to_string())),
        None => Err(FeederError::MissingPhase {
            bus: bus.to_string(),
            phase,
        }),
    }
}
