use nalgebra::{Complex, DMatrix};

use super::{FeederError, NetworkModel, NodeId, PhaseId};
use crate::scalar::{cast_complex, real, Real};

/// Series admittance of one branch, with the node indices of both ends.
#[derive(Debug, Clone)]
pub struct BranchAdmittance<T: Real> {
    pub name: String,
    pub phases: Vec<PhaseId>,
    pub from_nodes: Vec<usize>,
    pub to_nodes: Vec<usize>,
    /// `inverse(series_impedance)`, per-unit.
    pub series: DMatrix<Complex<T>>,
}

impl<T: Real> BranchAdmittance<T> {
    /// Position of `phase` within this branch's phase list.
    pub fn phase_position(&self, phase: PhaseId) -> Option<usize> {
        self.phases.iter().position(|&p| p == phase)
    }
}

/// Node admittance matrix `Y` with `I = Y V`, plus the per-branch data the
/// measurement functions need.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix<T: Real> {
    pub y: DMatrix<Complex<T>>,
    pub node_map: Vec<NodeId>,
    pub branches: Vec<BranchAdmittance<T>>,
    reference_nodes: usize,
    reference_magnitude: T,
}

impl<T: Real> AdmittanceMatrix<T> {
    pub fn dim(&self) -> usize {
        self.node_map.len()
    }

    pub fn reference_node_count(&self) -> usize {
        self.reference_nodes
    }

    /// Number of free nodes (all non-reference nodes).
    pub fn free_node_count(&self) -> usize {
        self.dim() - self.reference_nodes
    }

    pub fn reference_magnitude(&self) -> T {
        self.reference_magnitude
    }

    /// Fixed reference angle of a node (only meaningful for reference nodes).
    pub fn phase_angle(&self, node: usize) -> T {
        real(self.node_map[node].phase.reference_angle())
    }
}

/// Assembles `Y` from the per-phase series and shunt blocks of every branch.
pub fn build_admittance<T: Real>(model: &NetworkModel) -> Result<AdmittanceMatrix<T>, FeederError> {
    let m = model.node_count();
    let mut y = DMatrix::<Complex<T>>::zeros(m, m);
    let mut branches = Vec::with_capacity(model.branches.len());
    let half: Complex<T> = Complex::new(real(0.5), T::zero());

    for br in &model.branches {
        let inv = br
            .series_impedance
            .clone()
            .try_inverse()
            .filter(|inv| inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
            .ok_or_else(|| FeederError::SingularImpedance {
                branch: br.name.clone(),
            })?;
        let series: DMatrix<Complex<T>> = inv.map(cast_complex);
        let shunt: DMatrix<Complex<T>> = br.shunt_admittance.map(cast_complex);
        let lookup = |bus: &str| -> Vec<usize> {
            br.phases
                .iter()
                .map(|&p| super::node_lookup(model, bus, p).map(|n| n.index))
                .collect::<Result<_, _>>()
                .expect("validated branch phases exist at both ends")
        };
        let from = lookup(&br.from_bus);
        let to = lookup(&br.to_bus);
        for (a, (&fa, &ta)) in from.iter().zip(&to).enumerate() {
            for (b, (&fb, &tb)) in from.iter().zip(&to).enumerate() {
                let ys = series[(a, b)];
                let ysh = shunt[(a, b)] * half;
                y[(fa, fb)] += ys + ysh;
                y[(ta, tb)] += ys + ysh;
                y[(fa, tb)] -= ys;
                y[(ta, fb)] -= ys;
            }
        }
        branches.push(BranchAdmittance {
            name: br.name.clone(),
            phases: br.phases.clone(),
            from_nodes: from,
            to_nodes: to,
            series,
        });
    }

    Ok(AdmittanceMatrix {
        y,
        node_map: model.node_map().to_vec(),
        branches,
        reference_nodes: model.reference_node_count(),
        reference_magnitude: real(model.reference_magnitude),
    })
}
