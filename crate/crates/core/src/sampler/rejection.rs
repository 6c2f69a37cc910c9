use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reweight::WeightedLatentSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub proposed: usize,
    pub accepted: usize,
    /// `Σ min(w, w_cap) / (n · w_cap)`, the expected acceptance fraction.
    pub expected_efficiency: f64,
    /// Points whose weight exceeded the cap and were accepted with probability 1.
    pub over_cap: usize,
}

#[derive(Debug, Clone)]
pub struct RejectionOutput {
    pub z: Array2<f64>,
    /// Row indices of the accepted points in the input set.
    pub indices: Vec<usize>,
    pub report: RejectionReport,
}

/// Accepts each latent point with probability `w / w_cap`. The result is unweighted.
pub fn rejection_sample<R: Rng + ?Sized>(set: &WeightedLatentSet, w_cap: f64, rng: &mut R) -> Result<RejectionOutput> {
    if !(w_cap > 0.0) || !w_cap.is_finite() {
        return Err(Error::Config(format!("rejection cap must be positive and finite, got {w_cap}")));
    }
    let mut indices = Vec::new();
    let mut over_cap = 0;
    let mut expected = 0.0;
    for (i, &w) in set.w.iter().enumerate() {
        if w > w_cap {
            over_cap += 1;
        }
        let prob = (w / w_cap).min(1.0);
        expected += prob;
        if rng.gen::<f64>() < prob {
            indices.push(i);
        }
    }
    if over_cap > 0 {
        log::warn!("rejection sampling: {over_cap} weights above the cap {w_cap} were clipped");
    }
    let n = set.len();
    let report = RejectionReport {
        proposed: n,
        accepted: indices.len(),
        expected_efficiency: if n > 0 { expected / n as f64 } else { 0.0 },
        over_cap,
    };
    Ok(RejectionOutput {
        z: set.z.select(Axis(0), &indices),
        indices,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use ndarray::Array1;

    fn set_with(w: Vec<f64>) -> WeightedLatentSet {
        let n = w.len();
        let z = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        WeightedLatentSet {
            x: z.clone(),
            z,
            w: Array1::from(w),
            n_clipped: 0,
        }
    }

    #[test]
    fn constant_weights_at_cap_accept_everything() {
        let set = set_with(vec![2.5; 100]);
        let out = rejection_sample(&set, 2.5, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(out.indices, (0..100).collect::<Vec<_>>());
        assert_eq!(out.z, set.z);
    }

    #[test]
    fn acceptance_follows_weight_ratio() {
        let n = 60_000;
        let set = set_with((0..n).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect());
        let out = rejection_sample(&set, 3.0, &mut stream_rng(2, 0)).unwrap();
        let low = out.indices.iter().filter(|&&i| i % 2 == 0).count() as f64 / (n / 2) as f64;
        let high = out.indices.iter().filter(|&&i| i % 2 == 1).count() as f64 / (n / 2) as f64;
        let se = ((1.0 / 3.0) * (2.0 / 3.0) / (n / 2) as f64).sqrt();
        assert!((low - 1.0 / 3.0).abs() < 4.0 * se, "{low}");
        assert_eq!(high, 1.0);
        // Expected efficiency Σw / (n w_cap) against the empirical fraction.
        let eff = out.report.expected_efficiency;
        assert!((eff - 2.0 / 3.0).abs() < 1e-12);
        let emp = out.report.accepted as f64 / n as f64;
        let se = (eff * (1.0 - eff) / n as f64).sqrt();
        assert!((emp - eff).abs() < 3.0 * se);
    }

    #[test]
    fn invalid_cap_and_clipping() {
        let set = set_with(vec![1.0, 5.0]);
        assert!(rejection_sample(&set, 0.0, &mut stream_rng(3, 0)).is_err());
        assert!(rejection_sample(&set, -1.0, &mut stream_rng(3, 0)).is_err());
        let out = rejection_sample(&set, 2.0, &mut stream_rng(3, 0)).unwrap();
        assert_eq!(out.report.over_cap, 1);
        assert!(out.indices.contains(&1));
    }
}
