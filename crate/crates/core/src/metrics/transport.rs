//! Primal network simplex for the balanced transportation problem.
//!
//! Sources `0..m` ship to sinks `m..m+n` over the complete bipartite graph of
//! uncapacitated arcs; node `m+n` is an artificial root joined to every node,
//! which gives the initial strongly feasible spanning tree. Entering arcs are
//! chosen by block search pricing, leaving arcs by the strongly-feasible tie
//! rule (prefer the last blocking arc on the cycle), which rules out cycling.
//!
//! The tree is stored with parent pointers, depths and explicit child lists;
//! after a pivot only the re-hung subtree has its depths and potentials updated.

use crate::error::{Error, Result};

/// Flow from source `from` to sink `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shipment {
    pub from: usize,
    pub to: usize,
    pub amount: f64,
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub cost: f64,
    pub shipments: Vec<Shipment>,
    pub pivots: usize,
}

const NONE: usize = usize::MAX;

struct Simplex<'a, F> {
    m: usize,
    n: usize,
    cost: F,
    supply: &'a [f64],
    art_cost: f64,
    eps: f64,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// `true` when the tree arc into a node points from the node to its parent.
    up: Vec<bool>,
    flow: Vec<f64>,
    pi: Vec<f64>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
}

impl<F: Fn(usize, usize) -> f64> Simplex<'_, F> {
    fn root(&self) -> usize {
        self.m + self.n
    }

    fn real_arcs(&self) -> usize {
        self.m * self.n
    }

    /// (tail, head, cost) of an arc id.
    fn arc(&self, a: usize) -> (usize, usize, f64) {
        let real = self.real_arcs();
        if a < real {
            let (i, j) = (a / self.n, a % self.n);
            (i, self.m + j, (self.cost)(i, j))
        } else {
            let u = a - real;
            if self.supply[u] >= 0.0 {
                (u, self.root(), 0.0)
            } else {
                (self.root(), u, self.art_cost)
            }
        }
    }

    fn reduced_cost(&self, a: usize) -> f64 {
        let (i, j) = (a / self.n, a % self.n);
        (self.cost)(i, j) + self.pi[i] - self.pi[self.m + j]
    }

    fn find_join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] > self.depth[v] {
                u = self.parent[u];
            } else if self.depth[v] > self.depth[u] {
                v = self.parent[v];
            } else {
                u = self.parent[u];
                v = self.parent[v];
            }
        }
        u
    }

    fn detach(&mut self, child: usize, from: usize) {
        let list = &mut self.children[from];
        let pos = list.iter().position(|&c| c == child).expect("tree child lists out of sync");
        list.swap_remove(pos);
    }

    fn pivot(&mut self, in_arc: usize) {
        let (first, second, in_cost) = self.arc(in_arc);
        let join = self.find_join(first, second);

        // Leaving arc: minimum residual on the cycle, ties broken towards the
        // arc met last when walking the cycle in flow direction from `join`.
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut on_first = true;
        let mut u = first;
        while u != join {
            if self.up[u] && self.flow[u] < delta {
                delta = self.flow[u];
                u_out = u;
                on_first = true;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if !self.up[u] && self.flow[u] <= delta {
                delta = self.flow[u];
                u_out = u;
                on_first = false;
            }
            u = self.parent[u];
        }
        assert!(u_out != NONE, "transportation problem cannot be unbounded");

        if delta > 0.0 {
            let mut u = first;
            while u != join {
                if self.up[u] {
                    self.flow[u] -= delta;
                } else {
                    self.flow[u] += delta;
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                if self.up[u] {
                    self.flow[u] += delta;
                } else {
                    self.flow[u] -= delta;
                }
                u = self.parent[u];
            }
        }

        let (u_in, v_in) = if on_first { (first, second) } else { (second, first) };

        // Reverse the tree path u_in -> ... -> u_out and hang it below v_in.
        self.detach(u_out, self.parent[u_out]);
        let mut carry = (in_arc, u_in == first, delta);
        let mut prev = v_in;
        let mut node = u_in;
        loop {
            let old_parent = self.parent[node];
            let saved = (self.pred[node], self.up[node], self.flow[node]);
            if node != u_in {
                self.detach(prev, node);
            }
            self.parent[node] = prev;
            self.pred[node] = carry.0;
            self.up[node] = carry.1;
            self.flow[node] = carry.2;
            self.children[prev].push(node);
            if node == u_out {
                break;
            }
            carry = (saved.0, !saved.1, saved.2);
            prev = node;
            node = old_parent;
        }

        // Make the entering arc's reduced cost zero and refresh depths.
        let target = if self.up[u_in] {
            self.pi[v_in] - in_cost
        } else {
            self.pi[v_in] + in_cost
        };
        let sigma = target - self.pi[u_in];
        let mut stack = vec![u_in];
        while let Some(x) = stack.pop() {
            self.pi[x] += sigma;
            self.depth[x] = self.depth[self.parent[x]] + 1;
            stack.extend_from_slice(&self.children[x]);
        }
    }
}

/// Solve `min Σ c(i,j)·f_ij` subject to row sums `supply` and column sums
/// `demand` with `f ≥ 0`. Totals must agree to within `1e-9` relative.
pub fn solve_transport(
    supply: &[f64],
    demand: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> Result<TransportSolution> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::Config("transport problem needs at least one source and one sink".into()));
    }
    if supply.iter().chain(demand).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config("transport masses must be finite and non-negative".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 * total_s.max(total_d).max(1e-300) {
        return Err(Error::Config(format!("unbalanced transport problem: {total_s} vs {total_d}")));
    }

    let mut max_cost: f64 = 0.0;
    for i in 0..m {
        for j in 0..n {
            let c = cost(i, j);
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("transport cost ({i},{j})"),
                });
            }
            max_cost = max_cost.max(c.abs());
        }
    }

    let nodes = m + n + 1;
    let root = m + n;
    // Node supplies: sources positive, sinks negative; root unused.
    let mut node_supply = Vec::with_capacity(nodes);
    node_supply.extend_from_slice(supply);
    node_supply.extend(demand.iter().map(|d| -d));
    node_supply.push(0.0);

    let art_cost = (max_cost + 1.0) * nodes as f64;
    let mut s = Simplex {
        m,
        n,
        cost: &cost,
        supply: &node_supply,
        art_cost,
        eps: 1e-12 * (max_cost + 1.0),
        parent: vec![root; nodes],
        pred: (0..nodes).map(|u| m * n + u).collect(),
        up: vec![true; nodes],
        flow: vec![0.0; nodes],
        pi: vec![0.0; nodes],
        depth: vec![1; nodes],
        children: vec![Vec::new(); nodes],
    };
    s.parent[root] = NONE;
    s.depth[root] = 0;
    s.children[root] = (0..root).collect();
    for u in 0..root {
        if node_supply[u] >= 0.0 {
            s.up[u] = true;
            s.flow[u] = node_supply[u];
            s.pi[u] = 0.0;
        } else {
            s.up[u] = false;
            s.flow[u] = -node_supply[u];
            s.pi[u] = art_cost;
        }
    }

    let arcs = m * n;
    let block = ((arcs as f64).sqrt().ceil() as usize).max(10).min(arcs);
    let max_pivots = 50 * arcs + 10 * nodes * nodes + 1000;
    let mut next = 0usize;
    let mut pivots = 0usize;
    loop {
        // Block search pricing.
        let mut best = NONE;
        let mut best_rc = -s.eps;
        let mut scanned = 0;
        let mut in_block = 0;
        while scanned < arcs {
            let a = next;
            next += 1;
            if next == arcs {
                next = 0;
            }
            scanned += 1;
            in_block += 1;
            let rc = s.reduced_cost(a);
            if rc < best_rc {
                best_rc = rc;
                best = a;
            }
            if in_block == block {
                if best != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        if best == NONE {
            break;
        }
        s.pivot(best);
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver {
                iterations: pivots,
                reason: format!("pivot limit reached ({m} sources, {n} sinks)"),
            });
        }
    }

    let tol = 1e-9 * total_s.max(1e-300);
    let mut shipments = Vec::new();
    let mut total_cost = 0.0;
    for u in 0..root {
        let a = s.pred[u];
        if a >= arcs {
            if s.flow[u] > tol {
                return Err(Error::Solver {
                    iterations: pivots,
                    reason: format!("artificial arc of node {u} still carries {}", s.flow[u]),
                });
            }
            continue;
        }
        if s.flow[u] > 0.0 {
            let (i, j) = (a / n, a % n);
            total_cost += s.flow[u] * cost(i, j);
            shipments.push(Shipment {
                from: i,
                to: j,
                amount: s.flow[u],
            });
        }
    }
    shipments.sort_by_key(|sh| (sh.from, sh.to));
    Ok(TransportSolution {
        cost: total_cost,
        shipments,
        pivots,
    })
}
