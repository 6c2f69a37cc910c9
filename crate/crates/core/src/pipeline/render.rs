//! Density heat maps as PNG files.
//!
//! Colours are fixed by an absolute density scale rather than per-image
//! normalisation, so panels of one dataset are directly comparable.

use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metrics::{Bounds, Histogram2D};

/// Each histogram bin becomes a square of this many pixels.
pub const PIXELS_PER_BIN: u32 = 4;

/// Peak density of the 2D standard normal, the scale of latent panels.
pub const LATENT_PEAK: f64 = 1.0 / (2.0 * std::f64::consts::PI);

// Dark to bright; R+G+B increases monotonically along the ramp.
const RAMP: [[f64; 3]; 5] = [
    [0.0, 0.0, 0.0],
    [60.0, 15.0, 110.0],
    [190.0, 50.0, 100.0],
    [250.0, 150.0, 40.0],
    [255.0, 250.0, 200.0],
];

fn colour(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - k as f64;
    let c = |i: usize| (RAMP[k][i] + f * (RAMP[k + 1][i] - RAMP[k][i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Heat map of `h` with density `peak` (per unit area) at full brightness.
/// The first coordinate runs left to right, the second bottom to top.
pub fn histogram_image(h: &Histogram2D, peak: f64) -> Result<RgbImage> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Config(format!("colour scale peak must be positive, got {peak}")));
    }
    let density = h.density();
    let (nx, ny) = h.bins();
    let mut img = RgbImage::new(nx as u32 * PIXELS_PER_BIN, ny as u32 * PIXELS_PER_BIN);
    for i in 0..nx {
        for j in 0..ny {
            let px = colour(density[[i, j]] / peak);
            let row = (ny - 1 - j) as u32;
            for dx in 0..PIXELS_PER_BIN {
                for dy in 0..PIXELS_PER_BIN {
                    img.put_pixel(i as u32 * PIXELS_PER_BIN + dx, row * PIXELS_PER_BIN + dy, px);
                }
            }
        }
    }
    Ok(img)
}

pub fn render_histogram(h: &Histogram2D, peak: f64, path: &Path) -> Result<()> {
    let img = histogram_image(h, peak)?;
    img.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

/// Histograms `points` (optionally weighted) and renders the result.
pub fn render_density(
    points: &Array2<f64>,
    weights: Option<&[f64]>,
    bounds: Bounds,
    bins: (usize, usize),
    peak: f64,
    path: &Path,
) -> Result<()> {
    if points.nrows() == 0 {
        return Err(Error::Config("nothing to render: no points".into()));
    }
    if let Some(w) = weights {
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("nothing to render: all weights are zero".into()));
        }
    }
    let h = Histogram2D::from_points(points, weights, bounds, bins)?;
    render_histogram(&h, peak, path)
}

/// Brightness (R+G+B) of each pixel, laid out as a mass grid in the same
/// orientation as the histogram that produced the image.
pub fn image_brightness(img: &RgbImage) -> Array2<f64> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((w as usize, h as usize), |(i, j)| {
        let p = img.get_pixel(i as u32, h - 1 - j as u32);
        p.0.iter().map(|&c| c as f64).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetKind;
    use crate::metrics::b0_diagnostic;
    use crate::rng::stream_rng;

    #[test]
    fn ramp_brightness_is_monotone() {
        let mut last = -1.0;
        for k in 0..=1000 {
            let c = colour(k as f64 / 1000.0);
            let s: f64 = c.0.iter().map(|&v| v as f64).sum();
            assert!(s >= last);
            last = s;
        }
        assert_eq!(colour(-1.0), Rgb([0, 0, 0]));
        assert_eq!(colour(2.0), Rgb([255, 250, 200]));
    }

    #[test]
    fn deterministic_and_rejects_zero_weights() {
        let kind = DatasetKind::Rings;
        let pts = kind.sample(5000, &mut stream_rng(2, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        render_density(&pts, None, kind.bounds(), (32, 32), kind.peak_density(), &a).unwrap();
        render_density(&pts, None, kind.bounds(), (32, 32), kind.peak_density(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let zeros = vec![0.0; pts.nrows()];
        assert!(render_density(&pts, Some(&zeros), kind.bounds(), (32, 32), 1.0, &a).is_err());
        let missing = dir.path().join("no/such/dir/c.png");
        assert!(matches!(
            render_density(&pts, None, kind.bounds(), (32, 32), 1.0, &missing),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn truth_gaussians_render_shows_four_regions() {
        let kind = DatasetKind::Gaussians;
        let pts = kind.sample(200_000, &mut stream_rng(4, 1)).unwrap();
        let h = Histogram2D::from_points(&pts, None, kind.bounds(), (64, 64)).unwrap();
        let img = histogram_image(&h, kind.peak_density()).unwrap();
        assert_eq!(img.dimensions(), (64 * PIXELS_PER_BIN, 64 * PIXELS_PER_BIN));
        let pixels = Histogram2D::from_masses(image_brightness(&img), kind.bounds()).unwrap();
        assert_eq!(b0_diagnostic(&pixels, 0.95).unwrap(), 4);
        // upper-left blob (x0 < 0, x1 > 0) sits in the upper-left quadrant of the image
        let bright = |x: u32, y: u32| img.get_pixel(x, y).0.iter().map(|&c| c as u32).sum::<u32>();
        let q = 64 * PIXELS_PER_BIN / 4;
        assert!(bright(q, q) > 300);
        assert_eq!(bright(2 * q, 2 * q), 0);
    }
}
