use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[x0.0, x0.1] × [x1.0, x1.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x0: (f64, f64),
    pub x1: (f64, f64),
}

impl Bounds {
    pub const fn new(x0: (f64, f64), x1: (f64, f64)) -> Self {
        Self { x0, x1 }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0.0 && p[0] <= self.x0.1 && p[1] >= self.x1.0 && p[1] <= self.x1.1
    }

    pub fn width(&self) -> f64 {
        self.x0.1 - self.x0.0
    }

    pub fn height(&self) -> f64 {
        self.x1.1 - self.x1.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            (self.x0.0 * factor, self.x0.1 * factor),
            (self.x1.0 * factor, self.x1.1 * factor),
        )
    }
}

/// Normalized 2D histogram over fixed bounds.
///
/// Points outside the bounds are counted in `out_of_range` and also tracked
/// per nearest boundary bin in `overflow`, so transport distances can keep
/// the full mass while divergences see it as one extra bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    bounds: Bounds,
    bins: (usize, usize),
    mass: Array2<f64>,
    overflow: Array2<f64>,
    out_of_range: f64,
}

impl Histogram2D {
    /// Bin `points` (n × 2), optionally weighted, and normalize to total mass 1.
    pub fn from_points(
        points: &Array2<f64>,
        weights: Option<&[f64]>,
        bounds: Bounds,
        bins: (usize, usize),
    ) -> Result<Self> {
        if bins.0 < 2 || bins.1 < 2 {
            return Err(Error::Config(format!("need at least 2 bins per axis, got {bins:?}")));
        }
        if points.ncols() != 2 {
            return Err(Error::shape("histogram points", 2, points.ncols()));
        }
        if let Some(w) = weights {
            if w.len() != points.nrows() {
                return Err(Error::shape("histogram weights", points.nrows(), w.len()));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config("histogram weights must be finite and non-negative".into()));
            }
        }
        if !(bounds.width() > 0.0 && bounds.height() > 0.0) {
            return Err(Error::Config(format!("degenerate bounds {bounds:?}")));
        }

        let mut mass = Array2::zeros(bins);
        let mut overflow = Array2::zeros(bins);
        let mut out_of_range = 0.0;
        let dx = bounds.width() / bins.0 as f64;
        let dy = bounds.height() / bins.1 as f64;
        for (k, row) in points.rows().into_iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[k]);
            if w == 0.0 {
                continue;
            }
            let (x, y) = (row[0], row[1]);
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("histogram point {k}"),
                });
            }
            let fi = ((x - bounds.x0.0) / dx).floor();
            let fj = ((y - bounds.x1.0) / dy).floor();
            let i = (fi.max(0.0) as usize).min(bins.0 - 1);
            let j = (fj.max(0.0) as usize).min(bins.1 - 1);
            if bounds.contains([x, y]) {
                mass[[i, j]] += w;
            } else {
                overflow[[i, j]] += w;
                out_of_range += w;
            }
        }
        let total = mass.sum() + out_of_range;
        if total <= 0.0 {
            return Err(Error::Config("histogram has zero total weight".into()));
        }
        mass /= total;
        overflow /= total;
        Ok(Self {
            bounds,
            bins,
            mass,
            overflow,
            out_of_range: out_of_range / total,
        })
    }

    /// Build directly from bin masses (normalized here). Used for synthetic tests.
    pub fn from_masses(mass: Array2<f64>, bounds: Bounds) -> Result<Self> {
        let bins = mass.dim();
        if bins.0 < 1 || bins.1 < 1 {
            return Err(Error::Config("empty mass grid".into()));
        }
        if mass.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("masses must be finite and non-negative".into()));
        }
        let total = mass.sum();
        if total <= 0.0 {
            return Err(Error::Config("histogram has zero total weight".into()));
        }
        Ok(Self {
            bounds,
            bins,
            overflow: Array2::zeros(bins),
            mass: mass / total,
            out_of_range: 0.0,
        })
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn bins(&self) -> (usize, usize) {
        self.bins
    }

    /// In-range bin masses (sum to `1 - out_of_range`).
    pub fn mass(&self) -> &Array2<f64> {
        &self.mass
    }

    pub fn out_of_range(&self) -> f64 {
        self.out_of_range
    }

    /// In-range mass plus out-of-range mass folded into the nearest boundary bin.
    pub fn clamped_mass(&self) -> Array2<f64> {
        &self.mass + &self.overflow
    }

    pub fn bin_width(&self) -> (f64, f64) {
        (
            self.bounds.width() / self.bins.0 as f64,
            self.bounds.height() / self.bins.1 as f64,
        )
    }

    pub fn bin_center(&self, i: usize, j: usize) -> [f64; 2] {
        let (dx, dy) = self.bin_width();
        [
            self.bounds.x0.0 + (i as f64 + 0.5) * dx,
            self.bounds.x1.0 + (j as f64 + 0.5) * dy,
        ]
    }

    /// Mass per unit area.
    pub fn density(&self) -> Array2<f64> {
        let (dx, dy) = self.bin_width();
        &self.mass / (dx * dy)
    }

    pub fn same_binning(&self, other: &Self) -> bool {
        self.bins == other.bins && self.bounds == other.bounds
    }

    pub(crate) fn check_compatible(&self, other: &Self) -> Result<()> {
        if !self.same_binning(other) {
            return Err(Error::Config(format!(
                "histogram binning mismatch: {:?}/{:?} vs {:?}/{:?}",
                self.bins, self.bounds, other.bins, other.bounds
            )));
        }
        Ok(())
    }
}
