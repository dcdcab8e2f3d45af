use crate::power_flow::VoltageState;
use crate::scalar::{real, Real};

use super::ExperimentError;

/// Per-node percentage error of the estimated voltage magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeErrorVector<T>(pub Vec<T>);

impl<T: Real> NodeErrorVector<T> {
    pub fn max(&self) -> T {
        self.0.iter().copied().fold(T::zero(), |a, b| a.max(b))
    }
}

/// `|v_i - v_hat_i| / |v_i| * 100` for every node.
pub fn node_error<T: Real>(v_true: &[T], v_hat: &[T]) -> Result<NodeErrorVector<T>, ExperimentError> {
    if v_true.len() != v_hat.len() {
        return Err(ExperimentError::Dimension {
            expected: v_true.len(),
            got: v_hat.len(),
        });
    }
    let hundred: T = real(100.0);
    v_true
        .iter()
        .zip(v_hat)
        .enumerate()
        .map(|(i, (&v, &e))| {
            if v == T::zero() {
                Err(ExperimentError::ZeroMagnitude { node: i })
            } else {
                Ok((v - e).abs() / v.abs() * hundred)
            }
        })
        .collect::<Result<_, _>>()
        .map(NodeErrorVector)
}

/// Node errors between two voltage states (magnitudes only).
pub fn state_error<T: Real>(
    truth: &VoltageState<T>,
    estimate: &VoltageState<T>,
) -> Result<NodeErrorVector<T>, ExperimentError> {
    node_error(truth.magnitudes.as_slice(), estimate.magnitudes.as_slice())
}

/// Nearest-rank percentile: the smallest value with at least `p` percent of
/// the samples at or below it.
pub fn percentile<T: Real>(values: &[T], p: f64) -> Result<T, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::NoSamples);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(ExperimentError::InvalidGrid(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::{BigInt, BigRational, Signed, ToPrimitive};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_states_have_zero_error() {
        let v = [1.0, 0.97, 1.02];
        assert_eq!(node_error(&v, &v).unwrap().0, vec![0.0; 3]);
    }

    #[test]
    fn two_percent() {
        let e = node_error(&[1.0], &[0.98]).unwrap();
        assert!((e.0[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(node_error(&[0.0], &[1.0]), Err(ExperimentError::ZeroMagnitude { node: 0 })));
        assert!(matches!(node_error(&[1.0], &[1.0, 1.0]), Err(ExperimentError::Dimension { .. })));
        assert!(matches!(percentile::<f64>(&[], 50.0), Err(ExperimentError::NoSamples)));
    }

    fn exact(x: f64) -> BigRational {
        BigRational::from_float(x).unwrap()
    }

    #[test]
    fn matches_exact_rational_arithmetic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..200).map(|_| rng.random_range(0.85..1.1)).collect();
        let e: Vec<f64> = (0..200).map(|_| rng.random_range(0.85..1.1)).collect();
        let got = node_error(&v, &e).unwrap();
        let hundred = BigRational::from_integer(BigInt::from(100));
        for i in 0..v.len() {
            let want = ((exact(v[i]) - exact(e[i])).abs() / exact(v[i]).abs() * &hundred).to_f64().unwrap();
            assert!((got.0[i] - want).abs() <= 1e-12 * want.max(1.0), "{} vs {}", got.0[i], want);
        }
    }

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0).unwrap(), 95.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        for p in [0.0, 37.0, 95.0, 100.0] {
            assert_eq!(percentile(&[4.2], p).unwrap(), 4.2);
        }
    }

    #[test]
    fn uniform_sample_percentile() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let range = v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
        let p95 = percentile(&v, 95.0).unwrap();
        assert!((p95 - 0.95 * range).abs() < 0.02, "{p95}");
    }

    proptest! {
        #[test]
        fn percentile_is_order_invariant(mut v in proptest::collection::vec(0.0f64..10.0, 1..200), p in 0.0f64..=100.0) {
            let a = percentile(&v, p).unwrap();
            v.reverse();
            prop_assert_eq!(a, percentile(&v, p).unwrap());
            let below = v.iter().filter(|&&x| x <= a).count() as f64;
            prop_assert!(below / v.len() as f64 >= p / 100.0 - 1e-12);
        }
    }
}
