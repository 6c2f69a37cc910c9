//! Helpers shared by the integration tests: a dense LP oracle for small
//! transport problems and a recorder for named checks.

#![allow(dead_code)]

use std::time::{Duration, Instant};

const PIVOT_TOL: f64 = 1e-12;

/// Minimize `c·x` subject to `A x = b`, `x ≥ 0` with `b ≥ 0`, by a two-phase
/// tableau simplex using Bland's rule. Returns `None` if infeasible.
pub fn dense_simplex(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    let rhs = n + m;
    let mut t = vec![vec![0.0; n + m + 1]; m];
    for i in 0..m {
        assert!(b[i] >= 0.0, "right-hand side must be non-negative");
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][rhs] = b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut phase1 = vec![0.0; n + m];
    phase1[n..].iter_mut().for_each(|v| *v = 1.0);
    run_simplex(&mut t, &mut basis, &phase1, n + m);
    let infeasibility: f64 = (0..m).filter(|&r| basis[r] >= n).map(|r| t[r][rhs]).sum();
    if infeasibility > 1e-9 {
        return None;
    }
    // Drive artificial variables out of the basis where possible; rows where
    // that is impossible are redundant and never pivot again.
    for r in 0..m {
        if basis[r] >= n {
            if let Some(j) = (0..n).find(|&j| t[r][j].abs() > PIVOT_TOL) {
                pivot(&mut t, &mut basis, r, j);
            }
        }
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat(0.0).take(m));
    run_simplex(&mut t, &mut basis, &phase2, n);
    Some((0..m).filter(|&r| basis[r] < n).map(|r| c[basis[r]] * t[r][rhs]).sum())
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, j: usize) {
    let p = t[r][j];
    t[r].iter_mut().for_each(|v| *v /= p);
    let row = t[r].clone();
    for (k, other) in t.iter_mut().enumerate() {
        if k != r {
            let f = other[j];
            if f != 0.0 {
                other.iter_mut().zip(&row).for_each(|(v, &w)| *v -= f * w);
            }
        }
    }
    basis[r] = j;
}

fn run_simplex(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) {
    let m = t.len();
    let rhs = t[0].len() - 1;
    loop {
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let reduced = cost[j] - (0..m).map(|r| cost[basis[r]] * t[r][j]).sum::<f64>();
            reduced < -1e-12
        });
        let Some(j) = entering else { return };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            if t[r][j] > PIVOT_TOL {
                let ratio = t[r][rhs] / t[r][j];
                let better = match leave {
                    None => true,
                    Some((lr, best)) => ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[r] < basis[lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let (r, _) = leave.expect("transport problems are bounded");
        pivot(t, basis, r, j);
    }
}

/// Optimal cost of moving mass `a` onto mass `b` (equal totals) with the
/// given site coordinates and Euclidean ground cost.
pub fn lp_transport_cost(a: &[f64], b: &[f64], sites: &[[f64; 2]]) -> f64 {
    let n = a.len();
    let mut c = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            c.push(((sites[i][0] - sites[j][0]).powi(2) + (sites[i][1] - sites[j][1]).powi(2)).sqrt());
        }
    }
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        let mut row = vec![0.0; n * n];
        row[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = 1.0);
        rows.push(row);
        rhs.push(a[i]);
    }
    for j in 0..n {
        let mut row = vec![0.0; n * n];
        (0..n).for_each(|i| row[i * n + j] = 1.0);
        rows.push(row);
        rhs.push(b[j]);
    }
    dense_simplex(&c, &rows, &rhs).expect("balanced transport problem is feasible")
}

/// Named pass/fail checks of one acceptance criterion.
pub struct Criterion {
    pub number: u32,
    pub title: &'static str,
    pub limit: Duration,
    start: Instant,
    checks: Vec<(String, bool, String)>,
}

impl Criterion {
    pub fn new(number: u32, title: &'static str, limit: Duration) -> Self {
        println!("criterion {number}: {title}");
        Self {
            number,
            title,
            limit,
            start: Instant::now(),
            checks: Vec::new(),
        }
    }

    /// Counts work done before the criterion was created, such as a shared run.
    pub fn since(mut self, start: Instant) -> Self {
        self.start = start;
        self
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) -> bool {
        let (name, detail) = (name.into(), detail.into());
        println!("    [{}] {name}: {detail}", if pass { "pass" } else { "FAIL" });
        self.checks.push((name, pass, detail));
        pass
    }

    /// Prints the single summary line of the criterion and returns whether it passed.
    pub fn finish(mut self) -> bool {
        let elapsed = self.start.elapsed();
        let limit = self.limit;
        self.check(
            "runtime",
            elapsed <= limit,
            format!("{:.1}s (limit {:.0}s)", elapsed.as_secs_f64(), limit.as_secs_f64()),
        );
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
        let pass = failed.is_empty();
        if pass {
            println!("CRITERION {} PASS: {} ({} checks)", self.number, self.title, self.checks.len());
        } else {
            println!("CRITERION {} FAIL: {} (failed: {})", self.number, self.title, failed.join(", "));
        }
        pass
    }
}
