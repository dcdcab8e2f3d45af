use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{composite_h, MeasurementError, MeasurementKind, MeasurementSet, MeasurementSpec};
use crate::feeder::AdmittanceMatrix;
use crate::power_flow::VoltageState;
use crate::profiles::PseudoStats;
use crate::scalar::{real, Real};

/// Noise applied by [`simulate_sensors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorNoise {
    /// `z = H(V_true)` exactly.
    None,
    /// Independent zero-mean Gaussian noise with each component's sigma.
    Gaussian { seed: u64 },
}

/// Magnitude and angle sensors at each of `nodes`, both with `sigma`.
pub fn voltage_sensors<T: Real>(nodes: &[usize], sigma: T) -> Vec<MeasurementSpec<T>> {
    nodes
        .iter()
        .flat_map(|&node| {
            [
                MeasurementSpec::sensor(MeasurementKind::VoltageMagnitude { node }, sigma),
                MeasurementSpec::sensor(MeasurementKind::VoltageAngle { node }, sigma),
            ]
        })
        .collect()
}

/// Measures `v_true` with the given sensors.
pub fn simulate_sensors<T: Real>(
    v_true: &VoltageState<T>,
    specs: &[MeasurementSpec<T>],
    ybus: &AdmittanceMatrix<T>,
    noise: SensorNoise,
) -> Result<MeasurementSet<T>, MeasurementError> {
    let mut set = MeasurementSet::new();
    for s in specs {
        let k = s.components();
        set.push(*s, &vec![T::zero(); k])?;
    }
    set.validate(ybus)?;
    let mut z = composite_h(v_true, &set, ybus)?;
    if let SensorNoise::Gaussian { seed } = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut at = 0;
        for s in specs {
            for c in 0..s.components() {
                let draw: f64 = StandardNormal.sample(&mut rng);
                z[at] += s.sigma[c] * real::<T>(draw);
                at += 1;
            }
        }
    }
    let mut out = MeasurementSet::new();
    let offsets = set.offsets();
    for (s, o) in specs.iter().zip(offsets) {
        let vals: Vec<T> = z.rows(o, s.components()).iter().copied().collect();
        out.push(*s, &vals)?;
    }
    Ok(out)
}

/// Appends load pseudo-measurements at `nodes`: `z = -(P_hat, Q_hat)` in the
/// injection convention, variances from the diagonals of `Sigma_P`, `Sigma_Q`.
pub fn attach_pseudo<T: Real>(
    set: &MeasurementSet<T>,
    stats: &PseudoStats<T>,
    nodes: &[usize],
    ybus: &AdmittanceMatrix<T>,
) -> Result<MeasurementSet<T>, MeasurementError> {
    let mut out = set.clone();
    for &node in nodes {
        if node >= stats.p_hat.len() {
            return Err(MeasurementError::NodeOutOfRange { index: out.len(), node });
        }
        let var_p = stats.sigma_p[(node, node)];
        let var_q = stats.sigma_q[(node, node)];
        if !(var_p > T::zero() && var_q > T::zero()) {
            return Err(MeasurementError::ZeroVariance {
                node: ybus.node_map[node].to_string(),
            });
        }
        out.push(
            MeasurementSpec::pseudo_power(node, var_p.sqrt(), var_q.sqrt()),
            &[-stats.p_hat[node], -stats.q_hat[node]],
        )?;
    }
    Ok(out)
}

/// Appends zero-injection virtual measurements (`P = Q = 0`) at unloaded
/// nodes, weighted by `sigma`.
pub fn attach_zero_injection<T: Real>(
    set: &MeasurementSet<T>,
    nodes: &[usize],
    sigma: T,
) -> Result<MeasurementSet<T>, MeasurementError> {
    let mut out = set.clone();
    for &node in nodes {
        out.push(MeasurementSpec::pseudo_power(node, sigma, sigma), &[T::zero(), T::zero()])?;
    }
    Ok(out)
}
