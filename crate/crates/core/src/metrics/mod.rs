//! Histogram-based distances between 2D samples and the b0 topology check.

mod divergence;
mod emd;
mod histogram;
mod report;
mod topology;
pub mod transport;

pub use divergence::{jsd, jsd_masses};
pub use emd::{emd, emd_plan, transport_between, EmdPlan};
pub use histogram::{Bounds, Histogram2D};
pub use report::{score_uncertainty, Method, Score, ScoreReport, SCORE_CSV_HEADER};
pub use topology::{b0_diagnostic, components, retained_mask};

/// Default threshold quantile of the b0 diagnostic.
pub const B0_QUANTILE: f64 = 0.95;
/// Default grid of the b0 diagnostic.
pub const B0_BINS: (usize, usize) = (64, 64);

/// Convenience wrapper around [`Histogram2D::from_points`].
pub fn histogram(
    points: &ndarray::Array2<f64>,
    weights: Option<&[f64]>,
    bounds: Bounds,
    bins: (usize, usize),
) -> crate::error::Result<Histogram2D> {
    Histogram2D::from_points(points, weights, bounds, bins)
}
