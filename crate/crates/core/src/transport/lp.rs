//! Exact discrete transport by the transportation simplex method.
//!
//! Starts from the northwest-corner basis, prices with Dantzig's rule and
//! falls back to Bland's rule after a run of degenerate pivots. Sizes up to a
//! few hundred atoms per side are comfortable.

use std::collections::VecDeque;
use std::fmt::Write as _;

use super::{CostSpec, PotentialPair};
use crate::error::{Error, Result};

const WEIGHT_TOL: f64 = 1e-9;

/// Weighted point masses on the line.
#[derive(Debug, Clone, PartialEq)]
pub struct Atoms {
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl Atoms {
    pub fn new(locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if locations.is_empty() || locations.len() != weights.len() {
            return Err(Error::invalid("atoms need matching, non-empty locations and weights"));
        }
        if locations.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("atom locations must be finite"));
        }
        check_weights(&weights)?;
        Ok(Self { locations, weights })
    }

    /// `n` atoms of mass `1/n`.
    pub fn equal(locations: Vec<f64>) -> Result<Self> {
        let n = locations.len();
        Self::new(locations, vec![1.0 / n as f64; n])
    }

    /// Cell masses of a density, placed at the cell midpoints.
    pub fn from_density(nu: &crate::measures::DiscreteDensity) -> Self {
        Self {
            locations: nu.grid().nodes(),
            weights: nu.cell_masses(),
        }
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Lp(format!("infeasible weights: entry {bad}")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Lp(format!("infeasible weights: total mass {total}")));
    }
    Ok(())
}

/// Coupling matrix with its prescribed marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub source_weights: Vec<f64>,
    pub target_weights: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
}

impl TransportPlan {
    pub fn cost_with(&self, costs: &[Vec<f64>]) -> f64 {
        self.matrix
            .iter()
            .zip(costs)
            .map(|(row, crow)| row.iter().zip(crow).map(|(x, c)| x * c).sum::<f64>())
            .sum()
    }

    /// Largest deviation of a row or column sum from its marginal.
    pub fn marginal_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, a) in self.matrix.iter().zip(&self.source_weights) {
            worst = worst.max((row.iter().sum::<f64>() - a).abs());
        }
        for (j, b) in self.target_weights.iter().enumerate() {
            let col: f64 = self.matrix.iter().map(|r| r[j]).sum();
            worst = worst.max((col - b).abs());
        }
        worst
    }

    /// Cells carrying more than `tol` mass, in row-major order.
    pub fn support(&self, tol: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if x > tol {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// True when the support is a monotone staircase: for `i < i'` every
    /// target of `i` is at most every target of `i'`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        let mut max_prev: Option<usize> = None;
        for row in &self.matrix {
            let cols: Vec<usize> = (0..row.len()).filter(|&j| row[j] > tol).collect();
            if let (Some(&first), Some(&last)) = (cols.first(), cols.last()) {
                if max_prev.is_some_and(|m| first < m) {
                    return false;
                }
                max_prev = Some(last);
            }
        }
        true
    }

    /// CSV with columns `i,j,mass` for the non-zero cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,mass\n");
        for (i, j) in self.support(0.0) {
            let _ = writeln!(out, "{i},{j},{}", self.matrix[i][j]);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub plan: TransportPlan,
    /// Row and column duals, `phi[0] = 0`. `phi_c` here is the column dual,
    /// feasible but not necessarily the c-transform of `phi`.
    pub potentials: PotentialPair,
    pub value: f64,
    pub dual_value: f64,
    pub pivots: usize,
}

impl LpSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.value - self.dual_value).abs()
    }
}

/// Northwest-corner coupling. For atoms sorted by location this is the
/// monotone (quantile) coupling.
pub fn monotone_coupling(source: &[f64], target: &[f64]) -> TransportPlan {
    let (n, m) = (source.len(), target.len());
    let mut matrix = vec![vec![0.0; m]; n];
    for (i, j, x) in northwest_corner(source, target) {
        matrix[i][j] = x;
    }
    TransportPlan {
        source_weights: source.to_vec(),
        target_weights: target.to_vec(),
        matrix,
    }
}

/// Returns exactly `n + m - 1` cells forming a spanning tree.
fn northwest_corner(a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
    let (n, m) = (a.len(), b.len());
    let mut s = a.to_vec();
    let mut d = b.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(n + m - 1);
    while i < n && j < m {
        let x = s[i].min(d[j]).max(0.0);
        out.push((i, j, x));
        s[i] -= x;
        d[j] -= x;
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Optimal plan between two atomic measures for `cost`.
pub fn solve_lp(source: &Atoms, target: &Atoms, cost: &CostSpec) -> Result<LpSolution> {
    let costs: Vec<Vec<f64>> = source
        .locations
        .iter()
        .map(|&x| target.locations.iter().map(|&y| cost.cost(x, y)).collect())
        .collect();
    solve_lp_with_costs(&source.weights, &target.weights, &costs)
}

/// Optimal plan for an explicit `n x m` cost matrix.
pub fn solve_lp_with_costs(a: &[f64], b: &[f64], costs: &[Vec<f64>]) -> Result<LpSolution> {
    check_weights(a)?;
    check_weights(b)?;
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 || costs.len() != n || costs.iter().any(|r| r.len() != m) {
        return Err(Error::Lp("cost matrix shape does not match the weights".into()));
    }
    if costs.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Lp("cost matrix has non-finite entries".into()));
    }
    let mut simplex = Simplex::new(a, b, costs);
    let pivots = simplex.run()?;
    Ok(simplex.finish(a, b, pivots))
}

struct Simplex<'a> {
    n: usize,
    m: usize,
    costs: &'a [Vec<f64>],
    // basic cells: (row, col, flow)
    cells: Vec<(usize, usize, f64)>,
    // node k < n is row k, node n + j is column j; entries index `cells`
    adj: Vec<Vec<usize>>,
    u: Vec<f64>,
    v: Vec<f64>,
    tol: f64,
}

impl<'a> Simplex<'a> {
    fn new(a: &[f64], b: &[f64], costs: &'a [Vec<f64>]) -> Self {
        let (n, m) = (a.len(), b.len());
        let cells = northwest_corner(a, b);
        let mut adj = vec![Vec::new(); n + m];
        for (k, &(i, j, _)) in cells.iter().enumerate() {
            adj[i].push(k);
            adj[n + j].push(k);
        }
        let scale = costs
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, c| acc.max(c.abs()))
            .max(1e-300);
        Self {
            n,
            m,
            costs,
            cells,
            adj,
            u: vec![0.0; n],
            v: vec![0.0; m],
            tol: 1e-13 * scale,
        }
    }

    fn potentials(&mut self) {
        let n = self.n;
        let mut seen = vec![false; n + self.m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &k in &self.adj[node] {
                let (i, j, _) = self.cells[k];
                let c = self.costs[i][j];
                let other = if node < n { n + j } else { i };
                if !seen[other] {
                    seen[other] = true;
                    if other < n {
                        self.u[i] = c - self.v[j];
                    } else {
                        self.v[j] = c - self.u[i];
                    }
                    queue.push_back(other);
                }
            }
        }
    }

    fn entering(&self, bland: bool) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        let mut best_r = -self.tol;
        for i in 0..self.n {
            let row = &self.costs[i];
            for (j, (&c, &vj)) in row.iter().zip(&self.v).enumerate() {
                let r = c - self.u[i] - vj;
                if r < best_r {
                    if bland {
                        return Some((i, j));
                    }
                    best_r = r;
                    best = Some((i, j));
                }
            }
        }
        best
    }

    /// Cells on the tree path from row `i` to column `j`, in order.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let n = self.n;
        let total = n + self.m;
        let mut via = vec![usize::MAX; total];
        let mut seen = vec![false; total];
        let mut queue = VecDeque::from([i]);
        seen[i] = true;
        let goal = n + j;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &k in &self.adj[node] {
                let (ci, cj, _) = self.cells[k];
                let other = if node < n { n + cj } else { ci };
                if !seen[other] {
                    seen[other] = true;
                    via[other] = k;
                    queue.push_back(other);
                }
            }
        }
        let mut out = Vec::new();
        let mut node = goal;
        while node != i {
            let k = via[node];
            out.push(k);
            let (ci, cj, _) = self.cells[k];
            node = if node < n { n + cj } else { ci };
        }
        out.reverse();
        out
    }

    fn run(&mut self) -> Result<usize> {
        let cap = 50 * (self.n + self.m) * (self.n + self.m) + 1000;
        let mut degenerate_run = 0usize;
        for pivot in 0..cap {
            self.potentials();
            let bland = degenerate_run > 2 * (self.n + self.m);
            let Some((ei, ej)) = self.entering(bland) else {
                return Ok(pivot);
            };
            let path = self.path(ei, ej);
            // path[0] touches row ei and must lose flow; signs alternate
            let mut leave = usize::MAX;
            let mut theta = f64::INFINITY;
            let mut leave_flat = usize::MAX;
            for &k in path.iter().step_by(2) {
                let (ci, cj, x) = self.cells[k];
                let flat = ci * self.m + cj;
                if x < theta || (x == theta && flat < leave_flat) {
                    theta = x;
                    leave = k;
                    leave_flat = flat;
                }
            }
            if leave == usize::MAX {
                return Err(Error::Lp("no leaving cell on the pivot cycle".into()));
            }
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
            for (pos, &k) in path.iter().enumerate() {
                let x = &mut self.cells[k].2;
                if pos % 2 == 0 {
                    *x = (*x - theta).max(0.0);
                } else {
                    *x += theta;
                }
            }
            let (li, lj, _) = self.cells[leave];
            let n = self.n;
            self.adj[li].retain(|&k| k != leave);
            self.adj[n + lj].retain(|&k| k != leave);
            self.cells[leave] = (ei, ej, theta);
            self.adj[ei].push(leave);
            self.adj[n + ej].push(leave);
        }
        Err(Error::Lp(format!("no convergence after {cap} pivots")))
    }

    fn finish(mut self, a: &[f64], b: &[f64], pivots: usize) -> LpSolution {
        self.potentials();
        let mut matrix = vec![vec![0.0; self.m]; self.n];
        for &(i, j, x) in &self.cells {
            matrix[i][j] += x;
        }
        let plan = TransportPlan {
            source_weights: a.to_vec(),
            target_weights: b.to_vec(),
            matrix,
        };
        let value = plan.cost_with(self.costs);
        let dual_value = a.iter().zip(&self.u).map(|(w, p)| w * p).sum::<f64>()
            + b.iter().zip(&self.v).map(|(w, p)| w * p).sum::<f64>();
        LpSolution {
            plan,
            potentials: PotentialPair {
                phi: self.u,
                phi_c: self.v,
                anchor_index: 0,
            },
            value,
            dual_value,
            pivots,
        }
    }
}
