//! Yearlong load/PV profiles, scenario construction and pseudo-measurement
//! statistics.
//!
//! Scenario `k` scales the nominal load by the load multiplier `alpha_k`,
//! subtracts the solar multiplier `s_k` from the real part only and adds a
//! per-node uniform perturbation `eps_k in [-c alpha_k, c alpha_k]`:
//!
//! ```text
//! P_k = (alpha_k - s_k) Pbar + eps_k o Pbar
//! Q_k =  alpha_k Qbar        + eps_k o Qbar
//! ```

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::feeder::NetworkModel;
use crate::power_flow::InjectionVector;
use crate::scalar::{real, Real};

pub const HOURS_PER_YEAR: usize = 8760;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {text:?} is not a finite number")]
    Parse { row: usize, text: String },
    #[error("row {row}: negative value {value}")]
    Negative { row: usize, value: f64 },
    #[error("profile has {got} values, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("cannot normalise a series whose maximum is not positive")]
    NoPeak,
    #[error("scenario index {index} out of range (profiles have {len} entries)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("load profile has {load} entries but PV profile has {pv}")]
    LengthMismatch { load: usize, pv: usize },
    #[error("perturbation half-width c must be finite and non-negative, got {0}")]
    InvalidSpread(f64),
    #[error("sample statistics need at least 2 scenarios, got {0}")]
    TooFewScenarios(usize),
}

/// Hourly series of dimensionless multipliers (or raw PV output before
/// normalisation).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub label: String,
    pub values: Vec<f64>,
    pub resolution_hours: f64,
}

impl TimeSeries {
    pub fn hourly(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            values,
            resolution_hours: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Parses one value per line; blank lines and `#` comments are skipped.
/// With `yearlong` set the series must have exactly 8760 entries.
pub fn load_profile(source: &str, label: &str, yearlong: bool) -> Result<TimeSeries, ProfileError> {
    let mut values = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let row = i + 1;
        let value: f64 = text
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| ProfileError::Parse {
                row,
                text: text.to_string(),
            })?;
        if value < 0.0 {
            return Err(ProfileError::Negative { row, value });
        }
        values.push(value);
    }
    if yearlong && values.len() != HOURS_PER_YEAR {
        return Err(ProfileError::Length {
            expected: HOURS_PER_YEAR,
            got: values.len(),
        });
    }
    Ok(TimeSeries::hourly(label, values))
}

pub fn load_profile_file(path: impl AsRef<Path>, yearlong: bool) -> Result<TimeSeries, ProfileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("profile");
    load_profile(&text, label, yearlong)
}

/// Rescales `series` so that its maximum equals `target_peak`.
pub fn normalize_pv(series: &TimeSeries, target_peak: f64) -> Result<TimeSeries, ProfileError> {
    let peak = series.max();
    if !(peak > 0.0) {
        return Err(ProfileError::NoPeak);
    }
    let scale = target_peak / peak;
    let values = series
        .values
        .iter()
        .map(|&v| if v == peak { target_peak } else { v * scale })
        .collect();
    Ok(TimeSeries {
        label: format!("{} (normalised)", series.label),
        values,
        resolution_hours: series.resolution_hours,
    })
}

/// One net-load scenario. `p` and `q` are load-positive per-unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T: Real> {
    pub index: usize,
    pub alpha: T,
    pub solar: T,
    pub epsilon: DVector<T>,
    pub p: DVector<T>,
    pub q: DVector<T>,
}

impl<T: Real> Scenario<T> {
    pub fn injections(&self) -> InjectionVector<T> {
        InjectionVector::from_loads(&self.p, &self.q)
    }
}

/// Draws the per-node perturbation of scenario `k`. The stream of a ChaCha8
/// generator seeded with `seed` is set to `k`, so each `(seed, k)` pair owns
/// an independent, reproducible sequence.
pub fn perturbation(seed: u64, k: usize, half_width: f64, nodes: usize) -> Vec<f64> {
    if half_width == 0.0 {
        return vec![0.0; nodes];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    (0..nodes).map(|_| rng.random_range(-half_width..=half_width)).collect()
}

/// Builds scenario `k` from the load multiplier series `load` and the
/// (already normalised) solar series `pv`.
pub fn build_scenario<T: Real>(
    k: usize,
    load: &TimeSeries,
    pv: &TimeSeries,
    c: f64,
    seed: u64,
    model: &NetworkModel,
) -> Result<Scenario<T>, ProfileError> {
    if load.len() != pv.len() {
        return Err(ProfileError::LengthMismatch {
            load: load.len(),
            pv: pv.len(),
        });
    }
    if k >= load.len() {
        return Err(ProfileError::IndexOutOfRange { index: k, len: load.len() });
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(ProfileError::InvalidSpread(c));
    }
    let m = model.node_count();
    let alpha_f = load.values[k];
    let eps = perturbation(seed, k, c * alpha_f, m);
    let alpha: T = real(alpha_f);
    let solar: T = real(pv.values[k]);
    let epsilon = DVector::from_iterator(m, eps.into_iter().map(real::<T>));
    let p_bar = DVector::from_iterator(m, model.nominal_load.iter().map(|s| real::<T>(s.re)));
    let q_bar = DVector::from_iterator(m, model.nominal_load.iter().map(|s| real::<T>(s.im)));
    let p = &p_bar * (alpha - solar) + epsilon.component_mul(&p_bar);
    let q = &q_bar * alpha + epsilon.component_mul(&q_bar);
    Ok(Scenario {
        index: k,
        alpha,
        solar,
        epsilon,
        p,
        q,
    })
}

/// Builds every scenario in `window`.
pub fn build_scenarios<T: Real>(
    window: Range<usize>,
    load: &TimeSeries,
    pv: &TimeSeries,
    c: f64,
    seed: u64,
    model: &NetworkModel,
) -> Result<Vec<Scenario<T>>, ProfileError> {
    window.map(|k| build_scenario(k, load, pv, c, seed, model)).collect()
}

/// Sample mean and unbiased sample covariance of scenario injections.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoStats<T: Real> {
    pub p_hat: DVector<T>,
    pub q_hat: DVector<T>,
    pub sigma_p: DMatrix<T>,
    pub sigma_q: DMatrix<T>,
}

impl<T: Real> PseudoStats<T> {
    /// Same means, covariances multiplied by `factor`.
    pub fn with_scaled_covariance(&self, factor: T) -> Self {
        Self {
            p_hat: self.p_hat.clone(),
            q_hat: self.q_hat.clone(),
            sigma_p: &self.sigma_p * factor,
            sigma_q: &self.sigma_q * factor,
        }
    }

    /// Keeps these means but takes the covariances of `other`.
    pub fn with_covariance_of(&self, other: &Self) -> Self {
        Self {
            p_hat: self.p_hat.clone(),
            q_hat: self.q_hat.clone(),
            sigma_p: other.sigma_p.clone(),
            sigma_q: other.sigma_q.clone(),
        }
    }
}

struct Moments<T: Real> {
    count: usize,
    mean: DVector<T>,
    comoment: DMatrix<T>,
}

impl<T: Real> Moments<T> {
    fn new(m: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(m),
            comoment: DMatrix::zeros(m, m),
        }
    }

    // Welford update of mean and co-moment.
    fn push(&mut self, x: &DVector<T>) {
        self.count += 1;
        let n: T = real(self.count as f64);
        let before = x - &self.mean;
        self.mean += &before / n;
        let after = x - &self.mean;
        self.comoment.ger(T::one(), &before, &after, T::one());
    }

    fn covariance(&self) -> DMatrix<T> {
        let denom: T = real((self.count - 1) as f64);
        let half: T = real(0.5);
        (&self.comoment + self.comoment.transpose()) * (half / denom)
    }
}

/// Mean and unbiased covariance (divisor `n - 1`) of `P` and `Q` over the
/// given scenarios. Pass a slice to get windowed statistics.
pub fn pseudo_stats<T: Real>(scenarios: &[Scenario<T>]) -> Result<PseudoStats<T>, ProfileError> {
    if scenarios.len() < 2 {
        return Err(ProfileError::TooFewScenarios(scenarios.len()));
    }
    let m = scenarios[0].p.len();
    let mut p = Moments::new(m);
    let mut q = Moments::new(m);
    for s in scenarios {
        p.push(&s.p);
        q.push(&s.q);
    }
    Ok(PseudoStats {
        sigma_p: p.covariance(),
        sigma_q: q.covariance(),
        p_hat: p.mean,
        q_hat: q.mean,
    })
}
