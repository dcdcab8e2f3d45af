//! Measurement functions, their Jacobians and the composite measurement set.
//!
//! Complex-valued measurements are split into two real components (real and
//! imaginary part for phasors, `P` and `Q` for power) so the estimator works
//! with a real residual vector. Branch current is the series current
//! flowing from the `from` bus to the `to` bus of the branch.

mod functions;
mod placement;
mod sensors;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::feeder::{AdmittanceMatrix, FeederError, PhaseId};
use crate::scalar::{to_f64, Real};

pub use functions::{composite_h, eval_measurement, jacobian_h, residual};
pub use placement::{read_placement, read_placement_file, resolve_placement, SensorKind, SensorRecord};
pub use sensors::{attach_pseudo, attach_zero_injection, simulate_sensors, voltage_sensors, SensorNoise};

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("measurement #{index}: standard deviation must be positive and finite")]
    InvalidSigma { index: usize },
    #[error("measurement #{index}: node {node} out of range")]
    NodeOutOfRange { index: usize, node: usize },
    #[error("measurement #{index}: branch {branch} out of range")]
    BranchOutOfRange { index: usize, branch: usize },
    #[error("measurement #{index}: branch {branch} does not carry phase {phase}")]
    PhaseNotOnBranch { index: usize, branch: String, phase: PhaseId },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("covariance block of measurement #{index} is not positive definite")]
    NotPositiveDefinite { index: usize },
    #[error("node {node}: pseudo-measurement variance is zero")]
    ZeroVariance { node: String },
    #[error("sensor placement row {row}: {message}")]
    Placement { row: usize, message: String },
    #[error("duplicate sensor: {0}")]
    DuplicateSensor(String),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error("cannot read sensor placement {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementKind {
    BranchCurrentPhasor { branch: usize, phase: PhaseId },
    BranchCurrentMagnitude { branch: usize, phase: PhaseId },
    CurrentInjectionPhasor { node: usize },
    VoltageMagnitude { node: usize },
    VoltageAngle { node: usize },
    PowerInjection { node: usize },
}

impl MeasurementKind {
    /// Number of real components the measurement contributes to `z`.
    pub fn components(&self) -> usize {
        match self {
            Self::BranchCurrentPhasor { .. } | Self::CurrentInjectionPhasor { .. } | Self::PowerInjection { .. } => 2,
            Self::BranchCurrentMagnitude { .. } | Self::VoltageMagnitude { .. } | Self::VoltageAngle { .. } => 1,
        }
    }

    pub fn node(&self) -> Option<usize> {
        match *self {
            Self::CurrentInjectionPhasor { node }
            | Self::VoltageMagnitude { node }
            | Self::VoltageAngle { node }
            | Self::PowerInjection { node } => Some(node),
            _ => None,
        }
    }
}

/// One measurement: what is measured, where, and how accurately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSpec<T> {
    pub kind: MeasurementKind,
    /// Per-component standard deviation; only the first
    /// `kind.components()` entries are used.
    pub sigma: [T; 2],
    pub is_pseudo: bool,
}

impl<T: Real> MeasurementSpec<T> {
    pub fn sensor(kind: MeasurementKind, sigma: T) -> Self {
        Self {
            kind,
            sigma: [sigma, sigma],
            is_pseudo: false,
        }
    }

    pub fn pseudo_power(node: usize, sigma_p: T, sigma_q: T) -> Self {
        Self {
            kind: MeasurementKind::PowerInjection { node },
            sigma: [sigma_p, sigma_q],
            is_pseudo: true,
        }
    }

    pub fn components(&self) -> usize {
        self.kind.components()
    }

    fn validate(&self, index: usize, ybus: &AdmittanceMatrix<T>) -> Result<(), MeasurementError> {
        if self.sigma[..self.components()]
            .iter()
            .any(|s| !(s.is_finite() && *s > T::zero()))
        {
            return Err(MeasurementError::InvalidSigma { index });
        }
        match self.kind {
            MeasurementKind::BranchCurrentPhasor { branch, phase }
            | MeasurementKind::BranchCurrentMagnitude { branch, phase } => {
                let br = ybus
                    .branches
                    .get(branch)
                    .ok_or(MeasurementError::BranchOutOfRange { index, branch })?;
                if br.phase_position(phase).is_none() {
                    return Err(MeasurementError::PhaseNotOnBranch {
                        index,
                        branch: br.name.clone(),
                        phase,
                    });
                }
            }
            kind => {
                let node = kind.node().expect("node kinds");
                if node >= ybus.dim() {
                    return Err(MeasurementError::NodeOutOfRange { index, node });
                }
            }
        }
        Ok(())
    }
}

/// Ordered measurements with observed values `z` and a block-diagonal
/// covariance, one block per measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet<T: Real> {
    specs: Vec<MeasurementSpec<T>>,
    z: DVector<T>,
    blocks: Vec<DMatrix<T>>,
}

impl<T: Real> Default for MeasurementSet<T> {
    fn default() -> Self {
        Self {
            specs: Vec::new(),
            z: DVector::zeros(0),
            blocks: Vec::new(),
        }
    }
}

impl<T: Real> MeasurementSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a measurement with observed components `values`; its
    /// covariance block is `diag(sigma^2)`.
    pub fn push(&mut self, spec: MeasurementSpec<T>, values: &[T]) -> Result<(), MeasurementError> {
        let k = spec.components();
        if values.len() != k {
            return Err(MeasurementError::Dimension {
                expected: k,
                got: values.len(),
            });
        }
        let block = DMatrix::from_fn(k, k, |r, c| if r == c { spec.sigma[r] * spec.sigma[r] } else { T::zero() });
        self.specs.push(spec);
        self.blocks.push(block);
        let mut z: Vec<T> = self.z.iter().copied().collect();
        z.extend_from_slice(values);
        self.z = DVector::from_vec(z);
        Ok(())
    }

    pub fn specs(&self) -> &[MeasurementSpec<T>] {
        &self.specs
    }

    pub fn z(&self) -> &DVector<T> {
        &self.z
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Number of real components, i.e. `dim(z)`.
    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Replaces the covariance block of measurement `index`.
    pub fn set_block(&mut self, index: usize, block: DMatrix<T>) -> Result<(), MeasurementError> {
        let k = self.specs[index].components();
        if block.shape() != (k, k) {
            return Err(MeasurementError::Dimension {
                expected: k,
                got: block.nrows(),
            });
        }
        self.blocks[index] = block;
        Ok(())
    }

    /// Multiplies every covariance block by `factor`.
    pub fn scale_covariance(&mut self, factor: T) {
        for b in &mut self.blocks {
            *b *= factor;
        }
    }

    /// Dense assembled covariance.
    pub fn covariance(&self) -> DMatrix<T> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut at = 0;
        for b in &self.blocks {
            let k = b.nrows();
            out.view_mut((at, at), (k, k)).copy_from(b);
            at += k;
        }
        out
    }

    pub fn validate(&self, ybus: &AdmittanceMatrix<T>) -> Result<(), MeasurementError> {
        for (i, s) in self.specs.iter().enumerate() {
            s.validate(i, ybus)?;
        }
        Ok(())
    }

    /// Cholesky factors of every covariance block.
    pub fn whitener(&self) -> Result<Whitener<T>, MeasurementError> {
        let factors = self
            .blocks
            .iter()
            .enumerate()
            .map(|(index, b)| {
                Cholesky::new(b.clone())
                    .map(|c| c.l())
                    .filter(|l| l.diagonal().iter().all(|d| d.is_finite() && *d > T::zero()))
                    .ok_or(MeasurementError::NotPositiveDefinite { index })
            })
            .collect::<Result<_, _>>()?;
        Ok(Whitener { factors })
    }

    /// Copy with the specs in `keep` only (by index, in order).
    pub fn subset(&self, keep: &[usize]) -> Self {
        let mut out = Self::new();
        let offsets = self.offsets();
        for &i in keep {
            let k = self.specs[i].components();
            let vals: Vec<T> = self.z.rows(offsets[i], k).iter().copied().collect();
            out.push(self.specs[i], &vals).expect("consistent components");
            let last = out.blocks.len() - 1;
            out.blocks[last] = self.blocks[i].clone();
        }
        out
    }

    /// Offset of each measurement's first component in `z`.
    pub fn offsets(&self) -> Vec<usize> {
        self.specs
            .iter()
            .scan(0, |at, s| {
                let o = *at;
                *at += s.components();
                Some(o)
            })
            .collect()
    }

    /// Human-readable dump used in reports.
    pub fn describe(&self) -> Vec<(MeasurementKind, bool, Vec<f64>)> {
        let offsets = self.offsets();
        self.specs
            .iter()
            .zip(offsets)
            .map(|(s, o)| {
                let v = self.z.rows(o, s.components()).iter().map(|x| to_f64(*x)).collect();
                (s.kind, s.is_pseudo, v)
            })
            .collect()
    }
}

/// Block-wise inverse Cholesky factor: maps residuals `r` to `L^-1 r` so
/// that `r^T Sigma^-1 r = |L^-1 r|^2`.
#[derive(Debug, Clone)]
pub struct Whitener<T: Real> {
    factors: Vec<DMatrix<T>>,
}

impl<T: Real> Whitener<T> {
    pub fn whiten_vector(&self, r: &mut DVector<T>) {
        let mut at = 0;
        for l in &self.factors {
            let k = l.nrows();
            let mut seg = r.rows_mut(at, k);
            l.solve_lower_triangular_mut(&mut seg);
            at += k;
        }
    }

    pub fn whiten_matrix(&self, j: &mut DMatrix<T>) {
        let mut at = 0;
        for l in &self.factors {
            let k = l.nrows();
            let mut seg = j.rows_mut(at, k);
            l.solve_lower_triangular_mut(&mut seg);
            at += k;
        }
    }
}
