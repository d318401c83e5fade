//! Exact discrete optimal transport with squared-distance cost.
//!
//! Primal network simplex on the bipartite transportation graph, with an
//! artificial root, strongly feasible spanning trees (Cunningham's leaving
//! rule, so degenerate pivots cannot cycle) and block pricing.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Accepted deviation of a probability vector's sum from one.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// `(i, j, mass)` for every cell with positive flow.
    pub cells: Vec<(usize, usize, f64)>,
    /// Optimal value of `Σ π_ij D_ij²`.
    pub cost: f64,
}

impl TransportPlan {
    pub fn w2(&self) -> f64 {
        self.cost.max(0.0).sqrt()
    }
}

fn check_probability(v: &[f64], name: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Domain(format!("{name} is empty")));
    }
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Domain(format!("{name} has invalid mass {bad}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > MASS_TOL {
        return Err(Error::Domain(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// `W₂(μ, ν)` for the cost matrix of distances `d` (`len μ × len ν`).
pub fn wasserstein2(mu: &[f64], nu: &[f64], d: &DMatrix<f64>) -> Result<f64> {
    Ok(transport_plan(mu, nu, d)?.w2())
}

pub fn transport_plan(mu: &[f64], nu: &[f64], d: &DMatrix<f64>) -> Result<TransportPlan> {
    check_probability(mu, "source measure")?;
    check_probability(nu, "target measure")?;
    if d.shape() != (mu.len(), nu.len()) {
        return Err(Error::Domain(format!(
            "cost matrix is {:?}, expected {:?}",
            d.shape(),
            (mu.len(), nu.len())
        )));
    }
    if let Some(bad) = d.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Domain(format!("invalid distance {bad}")));
    }
    let src: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
    let dst: Vec<usize> = (0..nu.len()).filter(|&j| nu[j] > 0.0).collect();
    let supply: Vec<f64> = src.iter().map(|&i| mu[i]).collect();
    let demand: Vec<f64> = dst.iter().map(|&j| nu[j]).collect();
    let cost = DMatrix::from_fn(src.len(), dst.len(), |a, b| d[(src[a], dst[b])].powi(2));
    let flows = NetworkSimplex::new(&supply, &demand, &cost).solve();
    let mut cells = Vec::new();
    let mut total = 0.0;
    for (a, b, f) in flows {
        total += f * cost[(a, b)];
        cells.push((src[a], dst[b], f));
    }
    cells.sort_by_key(|&(i, j, _)| (i, j));
    Ok(TransportPlan { cells, cost: total })
}

struct NetworkSimplex {
    m: usize,
    n: usize,
    root: usize,
    tail: Vec<usize>,
    head: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    adjacency: Vec<Vec<usize>>,
    eps: f64,
}

const NONE: usize = usize::MAX;

impl NetworkSimplex {
    fn new(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let nodes = m + n + 1;
        let root = m + n;
        let real = m * n;
        let max_c = cost.iter().copied().fold(0.0, f64::max);
        let artificial = (max_c + 1.0) * (m + n) as f64;
        let mut ns = NetworkSimplex {
            m,
            n,
            root,
            tail: Vec::with_capacity(real + m + n),
            head: Vec::with_capacity(real + m + n),
            cost: Vec::with_capacity(real + m + n),
            flow: vec![0.0; real + m + n],
            in_tree: vec![false; real + m + n],
            parent: vec![NONE; nodes],
            parent_arc: vec![NONE; nodes],
            depth: vec![0; nodes],
            potential: vec![0.0; nodes],
            adjacency: vec![Vec::new(); nodes],
            eps: 1e-14 * (max_c + 1.0) * (m + n) as f64,
        };
        for i in 0..m {
            for j in 0..n {
                ns.tail.push(i);
                ns.head.push(m + j);
                ns.cost.push(cost[(i, j)]);
            }
        }
        // Sources push their supply to the root, the root feeds every sink.
        for i in 0..m {
            let a = ns.tail.len();
            ns.tail.push(i);
            ns.head.push(root);
            ns.cost.push(artificial);
            ns.flow[a] = supply[i];
            ns.attach(a);
        }
        for j in 0..n {
            let a = ns.tail.len();
            ns.tail.push(root);
            ns.head.push(m + j);
            ns.cost.push(artificial);
            ns.flow[a] = demand[j];
            ns.attach(a);
        }
        ns.rebuild();
        ns
    }

    fn attach(&mut self, a: usize) {
        self.in_tree[a] = true;
        self.adjacency[self.tail[a]].push(a);
        self.adjacency[self.head[a]].push(a);
    }

    fn detach(&mut self, a: usize) {
        self.in_tree[a] = false;
        for v in [self.tail[a], self.head[a]] {
            let list = &mut self.adjacency[v];
            let pos = list.iter().position(|&b| b == a).expect("tree arc present");
            list.swap_remove(pos);
        }
    }

    /// Recomputes parents, depths and potentials from the tree arcs.
    fn rebuild(&mut self) {
        let mut stack = vec![self.root];
        self.parent[self.root] = NONE;
        self.parent_arc[self.root] = NONE;
        self.depth[self.root] = 0;
        self.potential[self.root] = 0.0;
        while let Some(u) = stack.pop() {
            for k in 0..self.adjacency[u].len() {
                let a = self.adjacency[u][k];
                if a == self.parent_arc[u] {
                    continue;
                }
                let v = if self.tail[a] == u {
                    self.head[a]
                } else {
                    self.tail[a]
                };
                self.parent[v] = u;
                self.parent_arc[v] = a;
                self.depth[v] = self.depth[u] + 1;
                // Reduced cost c + π_tail − π_head vanishes on tree arcs.
                self.potential[v] = if self.tail[a] == u {
                    self.potential[u] + self.cost[a]
                } else {
                    self.potential[u] - self.cost[a]
                };
                stack.push(v);
            }
        }
    }

    fn reduced(&self, a: usize) -> f64 {
        self.cost[a] + self.potential[self.tail[a]] - self.potential[self.head[a]]
    }

    fn entering(&self, start: usize, block: usize) -> Option<usize> {
        let real = self.m * self.n;
        let mut best = None;
        let mut best_rc = -self.eps;
        let mut scanned = 0;
        let mut a = start;
        for _ in 0..real {
            if !self.in_tree[a] {
                let rc = self.reduced(a);
                if rc < best_rc {
                    best_rc = rc;
                    best = Some(a);
                }
            }
            scanned += 1;
            a = (a + 1) % real;
            if scanned >= block && best.is_some() {
                break;
            }
        }
        best
    }

    fn solve(mut self) -> Vec<(usize, usize, f64)> {
        let real = self.m * self.n;
        let block = ((real as f64).sqrt().ceil() as usize).max(10);
        let mut cursor = 0;
        while let Some(e) = self.entering(cursor, block) {
            cursor = (e + 1) % real;
            self.pivot(e);
        }
        (0..real)
            .filter(|&a| self.flow[a] > 0.0)
            .map(|a| (a / self.n, a % self.n, self.flow[a]))
            .collect()
    }

    fn pivot(&mut self, e: usize) {
        let (u, v) = (self.tail[e], self.head[e]);
        // Paths from u and v up to the apex; the cycle is oriented along e.
        let mut up_u = Vec::new();
        let mut up_v = Vec::new();
        let (mut a, mut b) = (u, v);
        while a != b {
            if self.depth[a] >= self.depth[b] {
                up_u.push(a);
                a = self.parent[a];
            } else {
                up_v.push(b);
                b = self.parent[b];
            }
        }
        // On u's side the cycle runs apex → u, i.e. parent → child.
        let blocking_u = |ns: &Self, z: usize| ns.tail[ns.parent_arc[z]] == z;
        // On v's side it runs v → apex, i.e. child → parent.
        let blocking_v = |ns: &Self, z: usize| ns.head[ns.parent_arc[z]] == z;
        let mut delta = f64::INFINITY;
        for &z in &up_u {
            if blocking_u(self, z) {
                delta = delta.min(self.flow[self.parent_arc[z]]);
            }
        }
        for &z in &up_v {
            if blocking_v(self, z) {
                delta = delta.min(self.flow[self.parent_arc[z]]);
            }
        }
        assert!(delta.is_finite(), "transport problem is bounded");
        // Last blocking arc met when walking apex → u → v → apex.
        let leaving_node = up_v
            .iter()
            .rev()
            .find(|&&z| blocking_v(self, z) && self.flow[self.parent_arc[z]] <= delta)
            .or_else(|| {
                up_u.iter()
                    .find(|&&z| blocking_u(self, z) && self.flow[self.parent_arc[z]] <= delta)
            })
            .copied()
            .expect("some arc blocks");
        let leaving = self.parent_arc[leaving_node];
        if delta > 0.0 {
            for &z in &up_u {
                let arc = self.parent_arc[z];
                if blocking_u(self, z) {
                    self.flow[arc] = (self.flow[arc] - delta).max(0.0);
                } else {
                    self.flow[arc] += delta;
                }
            }
            for &z in &up_v {
                let arc = self.parent_arc[z];
                if blocking_v(self, z) {
                    self.flow[arc] = (self.flow[arc] - delta).max(0.0);
                } else {
                    self.flow[arc] += delta;
                }
            }
        }
        self.flow[e] = delta;
        self.flow[leaving] = 0.0;
        self.detach(leaving);
        self.attach(e);
        self.rebuild();
    }
}
