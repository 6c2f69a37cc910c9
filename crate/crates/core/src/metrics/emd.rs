use super::histogram::Histogram2D;
use super::transport::{solve_transport, Shipment, TransportSolution};
use crate::error::Result;

/// Optimal transport plan between two histograms on the same grid.
/// Bin indices are flattened row-major (`i * bins.1 + j`).
#[derive(Debug, Clone)]
pub struct EmdPlan {
    pub cost: f64,
    pub flows: Vec<Shipment>,
    pub pivots: usize,
}

/// Earth mover's distance with Euclidean ground cost between bin centers.
///
/// Out-of-range mass is folded into the nearest boundary bin so both sides
/// keep unit mass.
pub fn emd(p: &Histogram2D, q: &Histogram2D) -> Result<f64> {
    Ok(emd_plan(p, q)?.cost)
}

pub fn emd_plan(p: &Histogram2D, q: &Histogram2D) -> Result<EmdPlan> {
    p.check_compatible(q)?;
    let a = p.clamped_mass();
    let b = q.clamped_mass();
    let bins = p.bins();
    let centers: Vec<[f64; 2]> = (0..bins.0)
        .flat_map(|i| (0..bins.1).map(move |j| (i, j)))
        .map(|(i, j)| p.bin_center(i, j))
        .collect();
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (a, b) = (a.as_slice().expect("contiguous"), b.as_slice().expect("contiguous"));
    transport_between(a, b, &centers)
}

/// EMD between two mass vectors on shared sites.
///
/// Mass common to both sides stays in place: with a metric ground cost some
/// optimal plan never moves it, so only the positive and negative parts of
/// `a − b` enter the solver.
pub fn transport_between(a: &[f64], b: &[f64], sites: &[[f64; 2]]) -> Result<EmdPlan> {
    let mut flows = Vec::new();
    let mut src = Vec::new();
    let mut src_mass = Vec::new();
    let mut dst = Vec::new();
    let mut dst_mass = Vec::new();
    for (k, (&x, &y)) in a.iter().zip(b).enumerate() {
        let stay = x.min(y);
        if stay > 0.0 {
            flows.push(Shipment {
                from: k,
                to: k,
                amount: stay,
            });
        }
        if x > y {
            src.push(k);
            src_mass.push(x - y);
        } else if y > x {
            dst.push(k);
            dst_mass.push(y - x);
        }
    }
    if src.is_empty() && dst.is_empty() {
        return Ok(EmdPlan {
            cost: 0.0,
            flows,
            pivots: 0,
        });
    }
    // Normalization rounding can leave one side empty with a negligible residue.
    let residue: f64 = src_mass.iter().sum::<f64>().max(dst_mass.iter().sum());
    if src.is_empty() || dst.is_empty() {
        if residue < 1e-12 {
            return Ok(EmdPlan {
                cost: 0.0,
                flows,
                pivots: 0,
            });
        }
        return Err(crate::error::Error::Config(format!(
            "histograms carry different total mass (residue {residue})"
        )));
    }
    let cost = |i: usize, j: usize| {
        let (s, t) = (sites[src[i]], sites[dst[j]]);
        (s[0] - t[0]).hypot(s[1] - t[1])
    };
    let TransportSolution {
        cost: moved,
        shipments,
        pivots,
    } = solve_transport(&src_mass, &dst_mass, cost)?;
    flows.extend(shipments.into_iter().map(|s| Shipment {
        from: src[s.from],
        to: dst[s.to],
        amount: s.amount,
    }));
    Ok(EmdPlan {
        cost: moved,
        flows,
        pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Bounds;
    use ndarray::Array2;
    use rand::Rng;

    fn grid(bins: usize) -> Bounds {
        Bounds::new((0.0, bins as f64), (0.0, bins as f64))
    }

    fn random_hist(rng: &mut impl Rng, bins: usize, bounds: Bounds) -> Histogram2D {
        loop {
            let m = Array2::from_shape_simple_fn((bins, bins), || {
                if rng.gen_bool(0.25) {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            });
            if m.sum() > 0.0 {
                return Histogram2D::from_masses(m, bounds).unwrap();
            }
        }
    }

    #[test]
    fn identical_histograms_cost_nothing() {
        let mut rng = crate::rng::stream_rng(1, 0);
        let h = random_hist(&mut rng, 6, grid(6));
        assert_eq!(emd(&h, &h).unwrap(), 0.0);
    }

    #[test]
    fn point_masses_at_distance() {
        let mut a = Array2::zeros((5, 5));
        let mut b = Array2::zeros((5, 5));
        a[[0, 0]] = 1.0;
        b[[3, 4]] = 1.0;
        let p = Histogram2D::from_masses(a, grid(5)).unwrap();
        let q = Histogram2D::from_masses(b, grid(5)).unwrap();
        assert!((emd(&p, &q).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn reduction_matches_full_problem() {
        let mut rng = crate::rng::stream_rng(2, 0);
        for _ in 0..20 {
            let bounds = grid(5);
            let p = random_hist(&mut rng, 5, bounds);
            let q = random_hist(&mut rng, 5, bounds);
            let reduced = emd(&p, &q).unwrap();
            let a: Vec<f64> = p.mass().iter().copied().collect();
            let b: Vec<f64> = q.mass().iter().copied().collect();
            let centers: Vec<[f64; 2]> = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).map(|(i, j)| p.bin_center(i, j)).collect();
            let full = solve_transport(&a, &b, |i, j| {
                (centers[i][0] - centers[j][0]).hypot(centers[i][1] - centers[j][1])
            })
            .unwrap();
            assert!((reduced - full.cost).abs() < 1e-9, "{reduced} vs {}", full.cost);
        }
    }

    #[test]
    fn metric_properties() {
        let mut rng = crate::rng::stream_rng(3, 0);
        for _ in 0..20 {
            let bounds = grid(6);
            let p = random_hist(&mut rng, 6, bounds);
            let q = random_hist(&mut rng, 6, bounds);
            let r = random_hist(&mut rng, 6, bounds);
            let pq = emd(&p, &q).unwrap();
            let qp = emd(&q, &p).unwrap();
            assert!((pq - qp).abs() < 1e-9);
            assert!(pq <= emd(&p, &r).unwrap() + emd(&r, &q).unwrap() + 1e-9);
            assert!(pq > 0.0);
        }
    }

    #[test]
    fn scales_with_coordinates() {
        let mut rng = crate::rng::stream_rng(4, 0);
        let b1 = Bounds::new((-1.0, 3.0), (0.5, 2.5));
        let b2 = b1.scaled(2.0);
        let p = random_hist(&mut rng, 5, b1);
        let q = random_hist(&mut rng, 5, b1);
        let p2 = Histogram2D::from_masses(p.mass().clone(), b2).unwrap();
        let q2 = Histogram2D::from_masses(q.mass().clone(), b2).unwrap();
        assert!((2.0 * emd(&p, &q).unwrap() - emd(&p2, &q2).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn plan_reproduces_marginals() {
        let mut rng = crate::rng::stream_rng(5, 0);
        let p = random_hist(&mut rng, 8, grid(8));
        let q = random_hist(&mut rng, 8, grid(8));
        let plan = emd_plan(&p, &q).unwrap();
        let mut rows = vec![0.0; 64];
        let mut cols = vec![0.0; 64];
        for f in &plan.flows {
            rows[f.from] += f.amount;
            cols[f.to] += f.amount;
        }
        for (k, (&a, &b)) in p.mass().iter().zip(q.mass().iter()).enumerate() {
            assert!((rows[k] - a).abs() < 1e-12);
            assert!((cols[k] - b).abs() < 1e-12);
        }
    }

    #[test]
    fn handles_full_resolution_grid() {
        // Two shifted blobs on a 32x32 grid: a realistic desk-scale instance.
        let bounds = Bounds::new((-4.0, 4.0), (-4.0, 4.0));
        let mk = |dx: f64| {
            Array2::from_shape_fn((32, 32), |(i, j)| {
                let x = -4.0 + (i as f64 + 0.5) * 0.25 - dx;
                let y = -4.0 + (j as f64 + 0.5) * 0.25;
                (-(x * x + y * y) / 2.0).exp()
            })
        };
        let p = Histogram2D::from_masses(mk(0.0), bounds).unwrap();
        let q = Histogram2D::from_masses(mk(0.5), bounds).unwrap();
        let d = emd(&p, &q).unwrap();
        // Translation of a (truncated) Gaussian by 0.5 moves mass by at most 0.5.
        assert!(d > 0.4 && d <= 0.5 + 1e-9, "{d}");
    }
}
