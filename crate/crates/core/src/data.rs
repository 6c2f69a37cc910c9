//! Two-dimensional toy targets with known topology.
//!
//! | kind          | components                                     | b0 | b1 |
//! |---------------|------------------------------------------------|----|----|
//! | gaussians     | N((±2, ±2), 0.4²·I), equal weights             | 4  | 0  |
//! | double_donut  | two rings r = 1.5 around (±1.5, 0), σ_r = 0.15 | 1  | 2  |
//! | rings         | three rings r = 1.2, σ_r = 0.12                | 3  | 3  |
//!
//! Ring radii are drawn from a normal truncated at ±4σ_r and Gaussian draws
//! falling outside the bounding box are redrawn, so every sample lies inside
//! the declared box.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Bounds;
use crate::rng::{stage_rng, Stage};

pub const GAUSSIAN_SIGMA: f64 = 0.4;
pub const DONUT_RADIUS: f64 = 1.5;
pub const DONUT_SIGMA: f64 = 0.15;
pub const RING_RADIUS: f64 = 1.2;
pub const RING_SIGMA: f64 = 0.12;
const TRUNCATION: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Gaussians,
    DoubleDonut,
    Rings,
}

/// One mixture component of a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Component {
    Blob { center: [f64; 2], sigma: f64 },
    Ring { center: [f64; 2], radius: f64, sigma: f64 },
}

impl Component {
    /// Distance used to attribute a point to its nearest component.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            Component::Blob { center, .. } => (p[0] - center[0]).hypot(p[1] - center[1]),
            Component::Ring { center, radius, .. } => ((p[0] - center[0]).hypot(p[1] - center[1]) - radius).abs(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        match *self {
            Component::Blob { center, sigma } => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [center[0] + sigma * a, center[1] + sigma * b]
            }
            Component::Ring { center, radius, sigma } => {
                let theta = rng.gen_range(0.0..2.0 * PI);
                let r = radius + sigma * truncated_normal(rng, TRUNCATION);
                [center[0] + r * theta.cos(), center[1] + r * theta.sin()]
            }
        }
    }
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, limit: f64) -> f64 {
    loop {
        let v: f64 = rng.sample(StandardNormal);
        if v.abs() <= limit {
            return v;
        }
    }
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Gaussians, DatasetKind::DoubleDonut, DatasetKind::Rings];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Gaussians => "gaussians",
            DatasetKind::DoubleDonut => "double_donut",
            DatasetKind::Rings => "rings",
        }
    }

    /// (b0, b1) of the target's support.
    pub fn betti(self) -> (u32, u32) {
        match self {
            DatasetKind::Gaussians => (4, 0),
            DatasetKind::DoubleDonut => (1, 2),
            DatasetKind::Rings => (3, 3),
        }
    }

    pub fn bounds(self) -> Bounds {
        match self {
            DatasetKind::Gaussians => Bounds::new((-4.0, 4.0), (-4.0, 4.0)),
            DatasetKind::DoubleDonut => Bounds::new((-4.5, 4.5), (-3.0, 3.0)),
            DatasetKind::Rings => Bounds::new((-5.0, 5.0), (-3.5, 3.5)),
        }
    }

    pub fn components(self) -> Vec<Component> {
        match self {
            DatasetKind::Gaussians => [[-2.0, -2.0], [-2.0, 2.0], [2.0, -2.0], [2.0, 2.0]]
                .into_iter()
                .map(|center| Component::Blob {
                    center,
                    sigma: GAUSSIAN_SIGMA,
                })
                .collect(),
            DatasetKind::DoubleDonut => [[-DONUT_RADIUS, 0.0], [DONUT_RADIUS, 0.0]]
                .into_iter()
                .map(|center| Component::Ring {
                    center,
                    radius: DONUT_RADIUS,
                    sigma: DONUT_SIGMA,
                })
                .collect(),
            DatasetKind::Rings => [[-3.0, -1.5], [0.0, 1.5], [3.0, -1.5]]
                .into_iter()
                .map(|center| Component::Ring {
                    center,
                    radius: RING_RADIUS,
                    sigma: RING_SIGMA,
                })
                .collect(),
        }
    }

    /// Index of the component closest to `p`.
    pub fn nearest_component(self, p: [f64; 2]) -> usize {
        let comps = self.components();
        let mut best = (0, f64::INFINITY);
        for (i, c) in comps.iter().enumerate() {
            let d = c.distance(p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Peak density of the target, used to fix the colour scale of renders.
    pub fn peak_density(self) -> f64 {
        let comps = self.components().len() as f64;
        match self {
            DatasetKind::Gaussians => 1.0 / (comps * 2.0 * PI * GAUSSIAN_SIGMA * GAUSSIAN_SIGMA),
            // the two donut rings touch at the origin, doubling the density there
            DatasetKind::DoubleDonut => 2.0 / (comps * 2.0 * PI * DONUT_RADIUS * (2.0 * PI).sqrt() * DONUT_SIGMA),
            DatasetKind::Rings => 1.0 / (comps * 2.0 * PI * RING_RADIUS * (2.0 * PI).sqrt() * RING_SIGMA),
        }
    }

    /// `n` i.i.d. draws from the target.
    pub fn sample<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::Config("dataset size must be positive".into()));
        }
        let comps = self.components();
        let bounds = self.bounds();
        let mut out = Array2::zeros((n, 2));
        for mut row in out.rows_mut() {
            let p = loop {
                let c = &comps[rng.gen_range(0..comps.len())];
                let p = c.sample(rng);
                if bounds.contains(p) {
                    break p;
                }
            };
            row[0] = p[0];
            row[1] = p[1];
        }
        Ok(out)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussians" => Ok(DatasetKind::Gaussians),
            "double_donut" | "double-donut" => Ok(DatasetKind::DoubleDonut),
            "rings" => Ok(DatasetKind::Rings),
            other => Err(Error::Config(format!("unknown dataset kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, n_train: usize, n_test: usize, seed: u64) -> Self {
        Self {
            kind,
            n_train,
            n_test,
            seed,
        }
    }

    pub fn paper(kind: DatasetKind, seed: u64) -> Self {
        Self::new(kind, 480_000, 2_000_000, seed)
    }

    pub fn train(&self) -> Result<Array2<f64>> {
        self.kind.sample(self.n_train, &mut stage_rng(self.seed, Stage::TrainData))
    }

    pub fn test(&self) -> Result<Array2<f64>> {
        self.kind.sample(self.n_test, &mut stage_rng(self.seed, Stage::TestData))
    }

    /// A second truth sample of test size, independent of `test()`; used for
    /// the truth-vs-truth score uncertainty.
    pub fn reference(&self) -> Result<Array2<f64>> {
        self.kind.sample(self.n_test, &mut stage_rng(self.seed, Stage::ReferenceData))
    }
}

/// Shuffled mini-batches over the rows of a matrix. The final partial batch is kept.
pub struct Batches<'a> {
    data: &'a Array2<f64>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Batches<'a> {
    pub fn len_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Row indices of the remaining batches.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

pub fn batches<'a, R: Rng + ?Sized>(data: &'a Array2<f64>, batch_size: usize, rng: &mut R) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    Ok(Batches {
        data,
        order: permutation(data.nrows(), rng),
        batch_size,
        pos: 0,
    })
}

pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

impl Iterator for Batches<'_> {
    type Item = Array2<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(self.data.select(Axis(0), idx))
    }
}

/// Split rows into (train, holdout) with `holdout_frac` of the rows held out
/// after a seeded shuffle. The holdout is never empty when `holdout_frac > 0`.
pub fn split_holdout<R: Rng + ?Sized>(
    data: &Array2<f64>,
    holdout_frac: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(0.0..1.0).contains(&holdout_frac) {
        return Err(Error::Config(format!("holdout fraction {holdout_frac} not in [0,1)")));
    }
    let n = data.nrows();
    let n_hold = if holdout_frac > 0.0 {
        ((n as f64 * holdout_frac).round() as usize).clamp(1, n.saturating_sub(1))
    } else {
        0
    };
    let order = permutation(n, rng);
    let hold = data.select(Axis(0), &order[..n_hold]);
    let train = data.select(Axis(0), &order[n_hold..]);
    Ok((train, hold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn fractions(kind: DatasetKind, data: &Array2<f64>) -> Vec<f64> {
        let mut counts = vec![0usize; kind.components().len()];
        for row in data.rows() {
            counts[kind.nearest_component([row[0], row[1]])] += 1;
        }
        counts.iter().map(|&c| c as f64 / data.nrows() as f64).collect()
    }

    #[test]
    fn gaussian_modes_equally_occupied() {
        let data = DatasetKind::Gaussians.sample(400_000, &mut stream_rng(1, 0)).unwrap();
        for f in fractions(DatasetKind::Gaussians, &data) {
            assert!((f - 0.25).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn rings_equally_occupied() {
        let data = DatasetKind::Rings.sample(100_000, &mut stream_rng(2, 0)).unwrap();
        for f in fractions(DatasetKind::Rings, &data) {
            assert!((f - 1.0 / 3.0).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn donut_radii_within_four_sigma() {
        let data = DatasetKind::DoubleDonut.sample(200_000, &mut stream_rng(3, 0)).unwrap();
        let comps = DatasetKind::DoubleDonut.components();
        for row in data.rows() {
            let d = comps
                .iter()
                .map(|c| c.distance([row[0], row[1]]))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 4.0 * DONUT_SIGMA + 1e-12, "{d}");
        }
    }

    #[test]
    fn samples_inside_bounds() {
        for kind in DatasetKind::ALL {
            let data = kind.sample(50_000, &mut stream_rng(4, 0)).unwrap();
            let b = kind.bounds();
            assert!(data.rows().into_iter().all(|r| b.contains([r[0], r[1]])));
        }
    }

    #[test]
    fn gaussian_moments_match_mixture() {
        // Mixture mean 0, covariance diag(4 + σ²).
        let n = 200_000;
        let data = DatasetKind::Gaussians.sample(n, &mut stream_rng(5, 0)).unwrap();
        let var = 4.0 + GAUSSIAN_SIGMA * GAUSSIAN_SIGMA;
        for j in 0..2 {
            let col = data.column(j);
            let mean = col.mean().unwrap();
            let m2 = col.mapv(|v| v * v).mean().unwrap();
            assert!(mean.abs() < 3.0 * (var / n as f64).sqrt(), "mean {mean}");
            // Var of x² for the mixture: E[x⁴] − (E[x²])², with E[x⁴] = 16 + 6·4σ² + 3σ⁴.
            let s2 = GAUSSIAN_SIGMA * GAUSSIAN_SIGMA;
            let e4 = 16.0 + 24.0 * s2 + 3.0 * s2 * s2;
            let se = ((e4 - var * var) / n as f64).sqrt();
            assert!((m2 - var).abs() < 3.0 * se, "second moment {m2}");
        }
        let cross = (&data.column(0) * &data.column(1)).mean().unwrap();
        assert!(cross.abs() < 3.0 * (var / n as f64).sqrt() * var.sqrt());
    }

    #[test]
    fn batch_counts() {
        let data = Array2::zeros((480_000, 2));
        let b = batches(&data, 2000, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(b.len_batches(), 240);
        assert_eq!(b.count(), 240);

        let small = Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64);
        let all: Vec<_> = batches(&small, 10, &mut stream_rng(0, 0)).unwrap().collect();
        assert_eq!(all.len(), 1);
        let mut firsts: Vec<usize> = all[0].column(0).iter().map(|&v| v as usize / 2).collect();
        firsts.sort();
        assert_eq!(firsts, (0..10).collect::<Vec<_>>());

        let partial: Vec<_> = batches(&small, 4, &mut stream_rng(0, 0)).unwrap().collect();
        assert_eq!(partial.iter().map(|b| b.nrows()).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert!(batches(&small, 0, &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn seeded_shuffles() {
        let data = Array2::zeros((50, 2));
        let mut r1 = stream_rng(9, 0);
        let e1 = batches(&data, 10, &mut r1).unwrap().order().to_vec();
        let e2 = batches(&data, 10, &mut r1).unwrap().order().to_vec();
        assert_ne!(e1, e2);
        let mut r2 = stream_rng(9, 0);
        assert_eq!(batches(&data, 10, &mut r2).unwrap().order(), e1.as_slice());
        assert_eq!(batches(&data, 10, &mut r2).unwrap().order(), e2.as_slice());
    }

    #[test]
    fn train_and_test_streams_are_independent() {
        let spec = DatasetSpec::new(DatasetKind::Rings, 100, 100, 42);
        assert_ne!(spec.train().unwrap(), spec.test().unwrap());
        assert_ne!(spec.test().unwrap(), spec.reference().unwrap());
        assert_eq!(spec.train().unwrap(), spec.train().unwrap());
    }

    #[test]
    fn kind_parsing() {
        for k in DatasetKind::ALL {
            assert_eq!(k.name().parse::<DatasetKind>().unwrap(), k);
        }
        assert!(matches!("moons".parse::<DatasetKind>(), Err(Error::Config(_))));
        assert!(DatasetKind::Rings.sample(0, &mut stream_rng(0, 0)).is_err());
    }
}
