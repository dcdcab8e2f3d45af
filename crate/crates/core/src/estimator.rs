//! Box-constrained weighted-least-squares state estimation.
//!
//! Minimises `(H(V) - z)^T Sigma^-1 (H(V) - z)` over the magnitudes and
//! angles of the non-reference nodes subject to `v_min <= |V_i| <= v_max`.
//! The residual is whitened block-wise with the Cholesky factors of `Sigma`
//! and the problem is solved with Levenberg-Marquardt: each trial step is
//! projected onto the magnitude box, accepted only if it lowers the
//! objective, and the damping grows after every rejection. Angles are left
//! unbounded while iterating and wrapped into `(-pi, pi]` on output.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::feeder::{AdmittanceMatrix, NodeId};
use crate::measurement::{jacobian_h, residual, MeasurementError, MeasurementSet, Whitener};
use crate::power_flow::VoltageState;
use crate::scalar::{real, Real};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator options: {0}")]
    InvalidOptions(String),
    #[error("initial state has {got} nodes, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions<T> {
    pub v_min: T,
    pub v_max: T,
    /// Projected-gradient threshold (infinity norm).
    pub tol_grad: T,
    /// Relative step threshold: stop when `|dx|_inf <= tol_step (1 + |x|_inf)`.
    pub tol_step: T,
    /// Outer iterations (Jacobian evaluations).
    pub max_iter: usize,
    pub damping_init: T,
}

impl<T: Real> Default for EstimatorOptions<T> {
    fn default() -> Self {
        Self {
            v_min: real(0.8),
            v_max: real(1.1),
            tol_grad: real(1e-8),
            tol_step: real(1e-10),
            max_iter: 100,
            damping_init: real(1e-3),
        }
    }
}

impl<T: Real> EstimatorOptions<T> {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.v_min > T::zero() && self.v_min < self.v_max) {
            return Err(EstimatorError::InvalidOptions("need 0 < v_min < v_max".into()));
        }
        if !(self.tol_grad > T::zero() && self.tol_step > T::zero() && self.damping_init > T::zero()) {
            return Err(EstimatorError::InvalidOptions("tolerances and damping must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(EstimatorError::InvalidOptions("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult<T: Real> {
    pub v_hat: VoltageState<T>,
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
    /// Nodes whose magnitude ends on `v_min` or `v_max`.
    pub active_bounds: Vec<NodeId>,
    /// Objective after every accepted step, starting with the initial point.
    pub objective_trace: Vec<T>,
    /// Infinity norm of the projected gradient at the returned point.
    pub projected_gradient: T,
}

/// Flat start: reference magnitude and per-phase reference angles everywhere.
pub fn flat_start<T: Real>(ybus: &AdmittanceMatrix<T>) -> VoltageState<T> {
    VoltageState::flat(ybus)
}

/// Weighted sum of squared residuals `r^T Sigma^-1 r`.
pub fn objective<T: Real>(
    state: &VoltageState<T>,
    set: &MeasurementSet<T>,
    ybus: &AdmittanceMatrix<T>,
) -> Result<T, EstimatorError> {
    let whitener = set.whitener()?;
    let mut r = residual(state, set, ybus)?;
    whitener.whiten_vector(&mut r);
    Ok(r.norm_squared())
}

/// Gradient of [`objective`] with respect to `[|V| free..., angle free...]`.
pub fn objective_gradient<T: Real>(
    state: &VoltageState<T>,
    set: &MeasurementSet<T>,
    ybus: &AdmittanceMatrix<T>,
) -> Result<DVector<T>, EstimatorError> {
    let whitener = set.whitener()?;
    let mut r = residual(state, set, ybus)?;
    let mut j = jacobian_h(state, set, ybus)?;
    whitener.whiten_vector(&mut r);
    whitener.whiten_matrix(&mut j);
    Ok(j.tr_mul(&r) * real::<T>(2.0))
}

struct Problem<'a, T: Real> {
    ybus: &'a AdmittanceMatrix<T>,
    set: &'a MeasurementSet<T>,
    whitener: Whitener<T>,
    state: VoltageState<T>,
    nref: usize,
    n: usize,
    v_min: T,
    v_max: T,
}

impl<T: Real> Problem<'_, T> {
    fn project(&self, x: &mut DVector<T>) {
        for v in x.rows_mut(0, self.n).iter_mut() {
            *v = v.clamp(self.v_min, self.v_max);
        }
    }

    fn residual_at(&mut self, x: &DVector<T>) -> Result<DVector<T>, EstimatorError> {
        self.state.set_free(self.nref, x);
        let mut r = residual(&self.state, self.set, self.ybus)?;
        self.whitener.whiten_vector(&mut r);
        Ok(r)
    }

    fn jacobian_at(&mut self, x: &DVector<T>) -> Result<DMatrix<T>, EstimatorError> {
        self.state.set_free(self.nref, x);
        let mut j = jacobian_h(&self.state, self.set, self.ybus)?;
        self.whitener.whiten_matrix(&mut j);
        Ok(j)
    }

    /// Free-vector positions of magnitudes at a bound whose descent
    /// direction points out of the box.
    fn binding(&self, x: &DVector<T>, g: &DVector<T>) -> Vec<usize> {
        (0..self.n)
            .filter(|&k| (x[k] <= self.v_min && g[k] > T::zero()) || (x[k] >= self.v_max && g[k] < T::zero()))
            .collect()
    }

    fn projected_gradient(&self, x: &DVector<T>, g: &DVector<T>) -> T {
        let mut trial = x - g;
        self.project(&mut trial);
        (x - trial).amax()
    }
}

/// Damping increases tried per iteration before giving up.
const MAX_DAMPING_INCREASES: usize = 40;

/// Estimates the most likely voltage state given `set`.
///
/// Running out of iterations is not an error: the best iterate is returned
/// with `converged == false`.
pub fn estimate<T: Real>(
    ybus: &AdmittanceMatrix<T>,
    set: &MeasurementSet<T>,
    options: &EstimatorOptions<T>,
    init: Option<&VoltageState<T>>,
) -> Result<EstimationResult<T>, EstimatorError> {
    options.validate()?;
    set.validate(ybus)?;
    let start = match init {
        Some(s) if s.len() != ybus.dim() => {
            return Err(EstimatorError::Dimension {
                expected: ybus.dim(),
                got: s.len(),
            })
        }
        Some(s) => {
            // Reference nodes always sit at their fixed phasors.
            let mut s = s.clone();
            let flat = VoltageState::flat(ybus);
            for i in 0..ybus.reference_node_count() {
                s.magnitudes[i] = flat.magnitudes[i];
                s.angles[i] = flat.angles[i];
            }
            s
        }
        None => flat_start(ybus),
    };
    let nref = ybus.reference_node_count();
    let mut problem = Problem {
        ybus,
        set,
        whitener: set.whitener()?,
        state: start.clone(),
        nref,
        n: ybus.free_node_count(),
        v_min: options.v_min,
        v_max: options.v_max,
    };

    let mut x = start.free_vector(nref);
    problem.project(&mut x);
    let mut r = problem.residual_at(&x)?;
    let mut f = r.norm_squared();
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;
    let mut lambda = options.damping_init;
    let mut nu: T = real(2.0);
    let mut pg = T::zero();
    let two: T = real(2.0);
    let quarter: T = real(0.25);
    let tenth: T = real(0.1);
    let half: T = real(0.5);
    let min_alpha: T = real(1.0 / 16.0);

    'outer: while iterations < options.max_iter {
        iterations += 1;
        let j = problem.jacobian_at(&x)?;
        let g = j.tr_mul(&r);
        pg = problem.projected_gradient(&x, &g);
        if pg < options.tol_grad {
            converged = true;
            break;
        }
        // Magnitudes held at a bound by the gradient stay fixed this iteration.
        let binding = problem.binding(&x, &g);
        let mut scaling = DVector::from_fn(j.ncols(), |k, _| j.column(k).norm_squared());
        let floor = match scaling.max() {
            m if m > T::zero() => m * real(1e-12),
            _ => T::one(),
        };
        scaling.apply(|d| *d = d.max(floor));
        let mut j_free = j.clone();
        for &k in &binding {
            j_free.column_mut(k).fill(T::zero());
            scaling[k] = T::one();
        }
        let rows = j.nrows();
        let cols = j.ncols();
        let mut rhs = DVector::zeros(rows + cols);
        rhs.rows_mut(0, rows).copy_from(&(-&r));

        let mut accepted = false;
        for _ in 0..MAX_DAMPING_INCREASES {
            // Damped Gauss-Newton step from the least-squares problem
            // [J; sqrt(lambda D)] delta = [-r; 0], solved by QR.
            let mut aug = DMatrix::zeros(rows + cols, cols);
            aug.view_mut((0, 0), (rows, cols)).copy_from(&j_free);
            for k in 0..cols {
                aug[(rows + k, k)] = (lambda * scaling[k]).sqrt();
            }
            let qr = aug.qr();
            let mut qtb = rhs.clone();
            qr.q_tr_mul(&mut qtb);
            let delta = qr
                .r()
                .solve_upper_triangular(&qtb.rows(0, cols).into_owned())
                .filter(|d| d.iter().all(|v| v.is_finite()));
            let Some(delta) = delta else {
                lambda *= nu;
                nu *= two;
                continue;
            };
            let mut x_trial = &x + &delta;
            problem.project(&mut x_trial);
            let step = &x_trial - &x;
            if step.amax() <= options.tol_step * (T::one() + x.amax()) {
                converged = true;
                break 'outer;
            }
            let r_trial = problem.residual_at(&x_trial)?;
            let f_trial = r_trial.norm_squared();
            if f_trial < f {
                let predicted = f - (&r + &j * &step).norm_squared();
                let rho = if predicted > T::zero() { (f - f_trial) / predicted } else { T::one() };
                if rho > quarter {
                    lambda *= tenth;
                }
                nu = two;
                x = x_trial;
                r = r_trial;
                f = f_trial;
                trace.push(f);
                accepted = true;
                break;
            }

            // Stiff rows (tight weights) curve away from the linear model;
            // try shorter steps along the same direction before damping more.
            let mut alpha = half;
            while alpha >= min_alpha {
                let x_new = &x + &step * alpha;
                let r_new = problem.residual_at(&x_new)?;
                let f_new = r_new.norm_squared();
                if f_new < f {
                    nu = two;
                    x = x_new;
                    r = r_new;
                    f = f_new;
                    trace.push(f);
                    accepted = true;
                    break;
                }
                alpha *= half;
            }
            if accepted {
                break;
            }
            lambda *= nu;
            nu *= two;
        }
        if !accepted {
            break;
        }
    }

    problem.state.set_free(nref, &x);
    if converged && pg >= options.tol_grad {
        let j = problem.jacobian_at(&x)?;
        pg = problem.projected_gradient(&x, &j.tr_mul(&r));
    }
    let mut v_hat = problem.state;
    v_hat.wrap_angles();
    let active_bounds = (nref..ybus.dim())
        .filter(|&i| v_hat.magnitudes[i] <= options.v_min || v_hat.magnitudes[i] >= options.v_max)
        .map(|i| ybus.node_map[i].clone())
        .collect();
    Ok(EstimationResult {
        v_hat,
        objective: f,
        iterations,
        converged,
        active_bounds,
        objective_trace: trace,
        projected_gradient: pg,
    })
}

#[cfg(test)]
mod tests;
