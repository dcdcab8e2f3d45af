//! Newton-Raphson load flow in polar coordinates.
//!
//! Every non-reference node is a PQ node. The unknowns are the magnitudes and
//! angles of the free nodes, ordered `[|V| free..., angle free...]`; the same
//! ordering is used for the estimator state.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::feeder::AdmittanceMatrix;
use crate::scalar::{argument, modulus, polar, real, to_f64, wrap_angle, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    Diverged { iterations: usize, mismatch: f64 },
    #[error("power flow Jacobian is singular at iteration {iteration}")]
    Singular { iteration: usize },
    #[error("injection vector has length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("injection vector has a non-finite entry")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions<T> {
    /// Largest acceptable per-node complex power mismatch, p.u.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for PowerFlowOptions<T> {
    fn default() -> Self {
        Self {
            tol: real(1e-8),
            max_iter: 50,
        }
    }
}

/// Polar voltage phasors for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageState<T: Real> {
    pub magnitudes: DVector<T>,
    pub angles: DVector<T>,
}

impl<T: Real> VoltageState<T> {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn phasors(&self) -> DVector<Complex<T>> {
        self.magnitudes.zip_map(&self.angles, polar)
    }

    pub fn from_phasors(v: &DVector<Complex<T>>) -> Self {
        Self {
            magnitudes: v.map(modulus),
            angles: v.map(argument),
        }
    }

    /// Flat profile: every node at the reference magnitude and its phase's
    /// reference angle.
    pub fn flat(ybus: &AdmittanceMatrix<T>) -> Self {
        let m = ybus.dim();
        Self {
            magnitudes: DVector::from_element(m, ybus.reference_magnitude()),
            angles: DVector::from_fn(m, |i, _| ybus.phase_angle(i)),
        }
    }

    /// Free-variable vector `[|V| free..., angle free...]`.
    pub fn free_vector(&self, reference_nodes: usize) -> DVector<T> {
        let n = self.len() - reference_nodes;
        DVector::from_fn(2 * n, |r, _| {
            if r < n {
                self.magnitudes[reference_nodes + r]
            } else {
                self.angles[reference_nodes + r - n]
            }
        })
    }

    pub fn set_free(&mut self, reference_nodes: usize, x: &DVector<T>) {
        let n = self.len() - reference_nodes;
        debug_assert_eq!(x.len(), 2 * n);
        for r in 0..n {
            self.magnitudes[reference_nodes + r] = x[r];
            self.angles[reference_nodes + r] = x[n + r];
        }
    }

    pub fn wrap_angles(&mut self) {
        self.angles.apply(|a| *a = wrap_angle(*a));
    }
}

/// Complex power injections, generation-positive: a load is a negative entry.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector<T: Real>(pub DVector<Complex<T>>);

impl<T: Real> InjectionVector<T> {
    pub fn zeros(m: usize) -> Self {
        Self(DVector::zeros(m))
    }

    /// Converts load-positive `P + jQ` per node into injections.
    pub fn from_loads(p: &DVector<T>, q: &DVector<T>) -> Self {
        Self(p.zip_map(q, |p, q| Complex::new(-p, -q)))
    }
}

/// Derivatives of the injected power `S_i = V_i conj((YV)_i)` of node `i`
/// with respect to magnitude and angle of every free node.
pub(crate) fn power_injection_row<T: Real>(
    ybus: &AdmittanceMatrix<T>,
    v: &DVector<Complex<T>>,
    unit: &DVector<Complex<T>>,
    current: &DVector<Complex<T>>,
    i: usize,
    d_mag: &mut [Complex<T>],
    d_ang: &mut [Complex<T>],
) {
    let nref = ybus.reference_node_count();
    let j = Complex::new(T::zero(), T::one());
    let vi = v[i];
    for (c, k) in (nref..ybus.dim()).enumerate() {
        let yik = ybus.y[(i, k)];
        let mut dm = vi * (yik * unit[k]).conj();
        let mut da = -(j * vi * (yik * v[k]).conj());
        if k == i {
            dm += current[i].conj() * unit[i];
            da += j * vi * current[i].conj();
        }
        d_mag[c] = dm;
        d_ang[c] = da;
    }
}

fn check_injections<T: Real>(ybus: &AdmittanceMatrix<T>, s: &InjectionVector<T>) -> Result<(), PowerFlowError> {
    if s.0.len() != ybus.dim() {
        return Err(PowerFlowError::Dimension {
            got: s.0.len(),
            expected: ybus.dim(),
        });
    }
    if s.0.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(PowerFlowError::NonFinite);
    }
    Ok(())
}

/// Per free node `|S_i - (V o conj(YV))_i|`; entry `r` belongs to node
/// `reference_node_count() + r`.
pub fn power_mismatch<T: Real>(
    ybus: &AdmittanceMatrix<T>,
    v: &VoltageState<T>,
    injections: &InjectionVector<T>,
) -> DVector<T> {
    let phasors = v.phasors();
    let current = &ybus.y * &phasors;
    let nref = ybus.reference_node_count();
    DVector::from_fn(ybus.free_node_count(), |r, _| {
        let i = nref + r;
        modulus(injections.0[i] - phasors[i] * current[i].conj())
    })
}

/// Solves `S = V o conj(Y V)` for the free node voltages from a flat start.
pub fn solve_power_flow<T: Real>(
    ybus: &AdmittanceMatrix<T>,
    injections: &InjectionVector<T>,
    options: &PowerFlowOptions<T>,
) -> Result<VoltageState<T>, PowerFlowError> {
    check_injections(ybus, injections)?;
    let nref = ybus.reference_node_count();
    let n = ybus.free_node_count();
    let mut state = VoltageState::flat(ybus);
    if n == 0 {
        return Ok(state);
    }
    let mut jac = DMatrix::<T>::zeros(2 * n, 2 * n);
    let mut d_mag = vec![Complex::new(T::zero(), T::zero()); n];
    let mut d_ang = d_mag.clone();
    let mut worst = T::zero();

    for iteration in 0..=options.max_iter {
        let v = state.phasors();
        let current = &ybus.y * &v;
        let mut rhs = DVector::<T>::zeros(2 * n);
        worst = T::zero();
        for r in 0..n {
            let i = nref + r;
            let ds = injections.0[i] - v[i] * current[i].conj();
            rhs[r] = ds.re;
            rhs[n + r] = ds.im;
            worst = worst.max(modulus(ds));
        }
        if worst < options.tol {
            state.wrap_angles();
            return Ok(state);
        }
        if iteration == options.max_iter {
            break;
        }
        let unit = v.map(|z| {
            let m = modulus(z);
            Complex::new(z.re / m, z.im / m)
        });
        for r in 0..n {
            power_injection_row(ybus, &v, &unit, &current, nref + r, &mut d_mag, &mut d_ang);
            for c in 0..n {
                jac[(r, c)] = d_mag[c].re;
                jac[(r, n + c)] = d_ang[c].re;
                jac[(n + r, c)] = d_mag[c].im;
                jac[(n + r, n + c)] = d_ang[c].im;
            }
        }
        let step = jac
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|x| x.is_finite()))
            .ok_or(PowerFlowError::Singular { iteration })?;
        let x = state.free_vector(nref) + step;
        state.set_free(nref, &x);
    }
    Err(PowerFlowError::Diverged {
        iterations: options.max_iter,
        mismatch: to_f64(worst),
    })
}
