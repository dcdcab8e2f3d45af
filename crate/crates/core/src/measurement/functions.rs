use nalgebra::{Complex, DMatrix, DVector};

use super::{MeasurementError, MeasurementKind, MeasurementSet, MeasurementSpec};
use crate::feeder::AdmittanceMatrix;
use crate::power_flow::{power_injection_row, VoltageState};
use crate::scalar::{argument, modulus, real, wrap_angle, Real};

/// Quantities shared by every measurement evaluated at one state.
struct Operating<T: Real> {
    v: DVector<Complex<T>>,
    unit: DVector<Complex<T>>,
    current: DVector<Complex<T>>,
}

impl<T: Real> Operating<T> {
    fn new(state: &VoltageState<T>, ybus: &AdmittanceMatrix<T>) -> Result<Self, MeasurementError> {
        if state.len() != ybus.dim() {
            return Err(MeasurementError::Dimension {
                expected: ybus.dim(),
                got: state.len(),
            });
        }
        let v = state.phasors();
        let unit = state.angles.map(|a| Complex::new(a.cos(), a.sin()));
        let current = &ybus.y * &v;
        Ok(Self { v, unit, current })
    }

    fn branch_current(&self, ybus: &AdmittanceMatrix<T>, branch: usize, phase: crate::PhaseId) -> Complex<T> {
        let br = &ybus.branches[branch];
        let p = br.phase_position(phase).expect("validated");
        (0..br.phases.len()).fold(Complex::new(T::zero(), T::zero()), |acc, q| {
            acc + br.series[(p, q)] * (self.v[br.from_nodes[q]] - self.v[br.to_nodes[q]])
        })
    }

    fn eval(&self, spec: &MeasurementSpec<T>, ybus: &AdmittanceMatrix<T>, out: &mut [T]) {
        let pair = |out: &mut [T], z: Complex<T>| {
            out[0] = z.re;
            out[1] = z.im;
        };
        match spec.kind {
            MeasurementKind::BranchCurrentPhasor { branch, phase } => {
                pair(out, self.branch_current(ybus, branch, phase))
            }
            MeasurementKind::BranchCurrentMagnitude { branch, phase } => {
                out[0] = modulus(self.branch_current(ybus, branch, phase))
            }
            MeasurementKind::CurrentInjectionPhasor { node } => pair(out, self.current[node]),
            MeasurementKind::VoltageMagnitude { node } => out[0] = modulus(self.v[node]),
            MeasurementKind::VoltageAngle { node } => out[0] = argument(self.v[node]),
            MeasurementKind::PowerInjection { node } => pair(out, self.v[node] * self.current[node].conj()),
        }
    }

    /// Writes the derivative rows of one measurement into `rows`
    /// (`components x 2n`, already zeroed).
    fn jacobian_rows(
        &self,
        spec: &MeasurementSpec<T>,
        ybus: &AdmittanceMatrix<T>,
        rows: &mut nalgebra::DMatrixViewMut<'_, T>,
        scratch: &mut (Vec<Complex<T>>, Vec<Complex<T>>),
    ) {
        let nref = ybus.reference_node_count();
        let n = ybus.free_node_count();
        let j = Complex::new(T::zero(), T::one());
        let floor: T = real(1e-12);
        // Column of the magnitude of node k, if free.
        let col = |k: usize| (k >= nref).then(|| k - nref);

        match spec.kind {
            MeasurementKind::VoltageMagnitude { node } => {
                if let Some(c) = col(node) {
                    rows[(0, c)] = T::one();
                }
            }
            MeasurementKind::VoltageAngle { node } => {
                if let Some(c) = col(node) {
                    rows[(0, n + c)] = T::one();
                }
            }
            MeasurementKind::CurrentInjectionPhasor { node } => {
                for k in nref..ybus.dim() {
                    let yik = ybus.y[(node, k)];
                    let dm = yik * self.unit[k];
                    let da = yik * j * self.v[k];
                    let c = k - nref;
                    rows[(0, c)] = dm.re;
                    rows[(1, c)] = dm.im;
                    rows[(0, n + c)] = da.re;
                    rows[(1, n + c)] = da.im;
                }
            }
            MeasurementKind::PowerInjection { node } => {
                let (dm, da) = scratch;
                power_injection_row(ybus, &self.v, &self.unit, &self.current, node, dm, da);
                for c in 0..n {
                    rows[(0, c)] = dm[c].re;
                    rows[(1, c)] = dm[c].im;
                    rows[(0, n + c)] = da[c].re;
                    rows[(1, n + c)] = da[c].im;
                }
            }
            MeasurementKind::BranchCurrentPhasor { branch, phase }
            | MeasurementKind::BranchCurrentMagnitude { branch, phase } => {
                let br = &ybus.branches[branch];
                let p = br.phase_position(phase).expect("validated");
                let magnitude = matches!(spec.kind, MeasurementKind::BranchCurrentMagnitude { .. });
                let current = self.branch_current(ybus, branch, phase);
                let scale = modulus(current).max(floor);
                let mut put = |k: usize, coeff: Complex<T>| {
                    if let Some(c) = col(k) {
                        let dm = coeff * self.unit[k];
                        let da = coeff * j * self.v[k];
                        if magnitude {
                            // d|f| = Re(conj(f) df) / |f|
                            rows[(0, c)] += (current.conj() * dm).re / scale;
                            rows[(0, n + c)] += (current.conj() * da).re / scale;
                        } else {
                            rows[(0, c)] += dm.re;
                            rows[(1, c)] += dm.im;
                            rows[(0, n + c)] += da.re;
                            rows[(1, n + c)] += da.im;
                        }
                    }
                };
                for q in 0..br.phases.len() {
                    let y = br.series[(p, q)];
                    put(br.from_nodes[q], y);
                    put(br.to_nodes[q], -y);
                }
            }
        }
    }
}

/// Value of a single measurement function at `state` (one or two components).
pub fn eval_measurement<T: Real>(
    state: &VoltageState<T>,
    spec: &MeasurementSpec<T>,
    ybus: &AdmittanceMatrix<T>,
) -> Result<Vec<T>, MeasurementError> {
    spec.validate(0, ybus)?;
    let op = Operating::new(state, ybus)?;
    let mut out = vec![T::zero(); spec.components()];
    op.eval(spec, ybus, &mut out);
    Ok(out)
}

/// Composite measurement function `H(V)`, measurements concatenated in set order.
pub fn composite_h<T: Real>(
    state: &VoltageState<T>,
    set: &MeasurementSet<T>,
    ybus: &AdmittanceMatrix<T>,
) -> Result<DVector<T>, MeasurementError> {
    let op = Operating::new(state, ybus)?;
    let mut out = DVector::zeros(set.dim());
    let mut at = 0;
    for spec in set.specs() {
        let k = spec.components();
        op.eval(spec, ybus, &mut out.as_mut_slice()[at..at + k]);
        at += k;
    }
    Ok(out)
}

/// `H(V) - z` with angle components wrapped into `(-pi, pi]`.
pub fn residual<T: Real>(
    state: &VoltageState<T>,
    set: &MeasurementSet<T>,
    ybus: &AdmittanceMatrix<T>,
) -> Result<DVector<T>, MeasurementError> {
    let mut r = composite_h(state, set, ybus)? - set.z();
    for (spec, o) in set.specs().iter().zip(set.offsets()) {
        if matches!(spec.kind, MeasurementKind::VoltageAngle { .. }) {
            r[o] = wrap_angle(r[o]);
        }
    }
    Ok(r)
}

/// Analytic Jacobian of `H` with respect to the free state
/// `[|V| free..., angle free...]`.
pub fn jacobian_h<T: Real>(
    state: &VoltageState<T>,
    set: &MeasurementSet<T>,
    ybus: &AdmittanceMatrix<T>,
) -> Result<DMatrix<T>, MeasurementError> {
    let op = Operating::new(state, ybus)?;
    let n = ybus.free_node_count();
    let mut jac = DMatrix::zeros(set.dim(), 2 * n);
    let zero = Complex::new(T::zero(), T::zero());
    let mut scratch = (vec![zero; n], vec![zero; n]);
    let mut at = 0;
    for spec in set.specs() {
        let k = spec.components();
        let mut rows = jac.rows_mut(at, k);
        op.jacobian_rows(spec, ybus, &mut rows, &mut scratch);
        at += k;
    }
    Ok(jac)
}
