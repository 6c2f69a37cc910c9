use std::collections::VecDeque;

use ndarray::Array2;

use super::histogram::Histogram2D;
use crate::error::{Error, Result};

/// Number of 8-connected components among the densest bins.
///
/// Bins are ranked by mass; the threshold is the mass of the bin at which the
/// running total first reaches `quantile` of the in-range mass, and every bin
/// at or above it is retained.
pub fn b0_diagnostic(h: &Histogram2D, quantile: f64) -> Result<usize> {
    Ok(components(&retained_mask(h.mass(), quantile)?))
}

/// Boolean mask of bins retained at the given mass quantile.
pub fn retained_mask(mass: &Array2<f64>, quantile: f64) -> Result<Array2<bool>> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::Config(format!("threshold quantile {quantile} not in (0,1)")));
    }
    let total: f64 = mass.sum();
    let mut sorted: Vec<f64> = mass.iter().copied().filter(|&m| m > 0.0).collect();
    if sorted.is_empty() || total <= 0.0 {
        log::warn!("b0 diagnostic on an empty histogram");
        return Ok(Array2::from_elem(mass.raw_dim(), false));
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    let target = quantile * total;
    let mut acc = 0.0;
    let mut threshold = sorted[sorted.len() - 1];
    for &m in &sorted {
        acc += m;
        if acc >= target {
            threshold = m;
            break;
        }
    }
    Ok(mass.mapv(|m| m > 0.0 && m >= threshold))
}

/// 8-connected component count of a boolean grid.
pub fn components(mask: &Array2<bool>) -> usize {
    let (rows, cols) = mask.dim();
    let mut seen = Array2::from_elem((rows, cols), false);
    let mut count = 0;
    let mut queue = VecDeque::new();
    for i in 0..rows {
        for j in 0..cols {
            if !mask[[i, j]] || seen[[i, j]] {
                continue;
            }
            count += 1;
            seen[[i, j]] = true;
            queue.push_back((i, j));
            while let Some((a, b)) = queue.pop_front() {
                for da in -1i64..=1 {
                    for db in -1i64..=1 {
                        let (x, y) = (a as i64 + da, b as i64 + db);
                        if x < 0 || y < 0 || x >= rows as i64 || y >= cols as i64 {
                            continue;
                        }
                        let (x, y) = (x as usize, y as usize);
                        if mask[[x, y]] && !seen[[x, y]] {
                            seen[[x, y]] = true;
                            queue.push_back((x, y));
                        }
                    }
                }
            }
        }
    }
    count
}
