use std::f64::consts::LN_2;
use std::iter::once;

use super::histogram::Histogram2D;
use crate::error::Result;

/// Jensen–Shannon divergence in nats, `½ KL(p‖m) + ½ KL(q‖m)` with `m = (p+q)/2`.
///
/// The out-of-range bucket takes part as one extra bin. Empty bins contribute
/// nothing. The result lies in `[0, ln 2]` and is exactly symmetric.
pub fn jsd(p: &Histogram2D, q: &Histogram2D) -> Result<f64> {
    p.check_compatible(q)?;
    let a = p.mass().iter().copied().chain(once(p.out_of_range()));
    let b = q.mass().iter().copied().chain(once(q.out_of_range()));
    Ok(jsd_masses(a, b))
}

/// JSD of two aligned probability vectors.
pub fn jsd_masses(p: impl Iterator<Item = f64>, q: impl Iterator<Item = f64>) -> f64 {
    let total: f64 = p
        .zip(q)
        .map(|(a, b)| {
            let m = a + b;
            let ta = if a > 0.0 { a * (2.0 * a / m).ln() } else { 0.0 };
            let tb = if b > 0.0 { b * (2.0 * b / m).ln() } else { 0.0 };
            ta + tb
        })
        .sum();
    (0.5 * total).clamp(0.0, LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Bounds;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn unit() -> Bounds {
        Bounds::new((0.0, 1.0), (0.0, 1.0))
    }

    #[test]
    fn self_divergence_is_zero() {
        let h = Histogram2D::from_masses(array![[0.1, 0.4], [0.3, 0.2]], unit()).unwrap();
        assert_eq!(jsd(&h, &h).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_supports_reach_ln2() {
        let p = Histogram2D::from_masses(array![[0.5, 0.5], [0.0, 0.0]], unit()).unwrap();
        let q = Histogram2D::from_masses(array![[0.0, 0.0], [0.2, 0.8]], unit()).unwrap();
        assert!((jsd(&p, &q).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn two_bin_hand_value() {
        // p = (0.5, 0.5), q = (0.9, 0.1), m = (0.7, 0.3)
        let expected = 0.5 * (0.5 * (0.5f64 / 0.7).ln() + 0.5 * (0.5f64 / 0.3).ln())
            + 0.5 * (0.9 * (0.9f64 / 0.7).ln() + 0.1 * (0.1f64 / 0.3).ln());
        let p = Histogram2D::from_masses(array![[0.5], [0.5]], unit()).unwrap();
        let q = Histogram2D::from_masses(array![[0.9], [0.1]], unit()).unwrap();
        assert!((jsd(&p, &q).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_bounded_on_random_pairs() {
        let mut rng = crate::rng::stream_rng(8, 0);
        for _ in 0..200 {
            let a = Array2::from_shape_simple_fn((5, 5), || if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() });
            let b = Array2::from_shape_simple_fn((5, 5), || if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() });
            if a.sum() == 0.0 || b.sum() == 0.0 {
                continue;
            }
            let p = Histogram2D::from_masses(a, unit()).unwrap();
            let q = Histogram2D::from_masses(b, unit()).unwrap();
            let d = jsd(&p, &q).unwrap();
            assert_eq!(d, jsd(&q, &p).unwrap());
            assert!((0.0..=LN_2).contains(&d));
        }
    }

    #[test]
    fn binning_mismatch_rejected() {
        let p = Histogram2D::from_masses(Array2::ones((2, 2)), unit()).unwrap();
        let q = Histogram2D::from_masses(Array2::ones((3, 2)), unit()).unwrap();
        assert!(jsd(&p, &q).is_err());
    }
}
