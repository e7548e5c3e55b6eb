//! Uniform-grid probability densities on a compact interval, their quantile
//! functions, and pushforwards.
//!
//! Densities are piecewise constant on the cells of a [`Grid`], so the CDF is
//! piecewise linear and its generalized inverse is computed exactly. Quantile
//! functions are sampled on a probability grid with one of two layouts:
//! cell midpoints `(j + 1/2) / m` or endpoints `j / (m - 1)`. The endpoint
//! layout carries `G(0)` and `G(1)` explicitly and is what the solvers use.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`DiscreteDensity`].
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::invalid(format!(
                "interval requires finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Slack used when deciding whether a computed value left the interval.
    pub(crate) fn slack(&self) -> f64 {
        1e-9 * self.length().max(1.0)
    }
}

/// `n` equal cells on an interval with nodes at the cell midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    interval: Interval,
    n: usize,
}

impl Grid {
    pub fn new(interval: Interval, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 cells, got {n}")));
        }
        Ok(Self { interval, n })
    }

    pub fn unit(n: usize) -> Result<Self> {
        Self::new(Interval::unit(), n)
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell width.
    pub fn spacing(&self) -> f64 {
        self.interval.length() / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.interval.lo + (i as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Left edge of cell `i`; `edge(n)` is the right end of the interval.
    pub fn edge(&self, i: usize) -> f64 {
        if i >= self.n {
            self.interval.hi
        } else {
            self.interval.lo + i as f64 * self.spacing()
        }
    }

    /// Index of the cell containing `y`, clamped to the grid.
    pub fn cell_of(&self, y: f64) -> usize {
        let k = ((y - self.interval.lo) / self.spacing()).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n - 1)
        }
    }
}

/// Probability density with respect to Lebesgue measure, constant on each
/// grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl DiscreteDensity {
    /// Validating constructor: values must be finite, non-negative and
    /// integrate to one within [`MASS_TOL`].
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::check_values(&grid, &values)?;
        let mass: f64 = values.iter().sum::<f64>() * grid.spacing();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("density integrates to {mass}, expected 1")));
        }
        Ok(Self { grid, values })
    }

    /// Rescales non-negative values so that they integrate to one.
    pub fn normalized(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        Self::check_values(&grid, &values)?;
        let mass: f64 = values.iter().sum::<f64>() * grid.spacing();
        if mass <= 0.0 || !mass.is_finite() {
            return Err(Error::invalid("density has no mass"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: Grid) -> Self {
        let v = 1.0 / grid.interval().length();
        Self {
            grid,
            values: vec![v; grid.n()],
        }
    }

    /// Samples `f` at the grid nodes and normalizes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::normalized(grid, values)
    }

    fn check_values(grid: &Grid, values: &[f64]) -> Result<()> {
        if values.len() != grid.n() {
            return Err(Error::invalid(format!(
                "density has {} values for a grid of {} cells",
                values.len(),
                grid.n()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!(
                "density value {v} at cell {i} is negative or non-finite"
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Mass carried by each cell.
    pub fn cell_masses(&self) -> Vec<f64> {
        let dx = self.grid.spacing();
        self.values.iter().map(|v| v * dx).collect()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.spacing()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// CDF at the cell edges; `cdf[0] = 0`, `cdf[n] = 1` exactly.
    pub fn cdf_at_edges(&self) -> Vec<f64> {
        let masses = self.cell_masses();
        let mut cdf = Vec::with_capacity(masses.len() + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cdf.push(acc);
        }
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        *cdf.last_mut().unwrap() = 1.0;
        cdf
    }

    /// Piecewise-linear CDF evaluated at `y`.
    pub fn cdf(&self, y: f64) -> f64 {
        let cdf = self.cdf_at_edges();
        cdf_eval(&self.grid, &cdf, y)
    }

    /// Generalized inverse `inf { y : F(y) >= p }` of the piecewise-linear
    /// CDF. At `p <= 0` this returns the left end of the support.
    pub fn quantile(&self, p: f64) -> f64 {
        let cdf = self.cdf_at_edges();
        quantile_eval(&self.grid, &cdf, p)
    }

    pub fn l1_distance(&self, other: &DiscreteDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.spacing()
    }

    pub fn sup_distance(&self, other: &DiscreteDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `node,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.grid.node(i), v);
        }
        out
    }
}

pub(crate) fn cdf_eval(grid: &Grid, cdf: &[f64], y: f64) -> f64 {
    let iv = grid.interval();
    if y <= iv.lo() {
        return 0.0;
    }
    if y >= iv.hi() {
        return 1.0;
    }
    let i = grid.cell_of(y);
    let frac = (y - grid.edge(i)) / grid.spacing();
    cdf[i] + frac.clamp(0.0, 1.0) * (cdf[i + 1] - cdf[i])
}

pub(crate) fn quantile_eval(grid: &Grid, cdf: &[f64], p: f64) -> f64 {
    let n = grid.n();
    if p <= 0.0 {
        // left end of the support
        let i = cdf.iter().skip(1).position(|&c| c > 0.0).unwrap_or(0);
        return grid.edge(i);
    }
    if p >= 1.0 {
        // right end of the support
        let i = (0..n).rev().find(|&i| cdf[i] < 1.0).unwrap_or(n - 1);
        return grid.edge(i + 1);
    }
    // smallest cell i with cdf[i+1] >= p
    let i = cdf[1..].partition_point(|&c| c < p).min(n - 1);
    let cell_mass = cdf[i + 1] - cdf[i];
    if cell_mass <= 0.0 {
        return grid.edge(i);
    }
    let frac = ((p - cdf[i]) / cell_mass).clamp(0.0, 1.0);
    grid.edge(i) + frac * grid.spacing()
}

/// Where the probability nodes of a quantile function sit in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeLayout {
    /// `(j + 1/2) / m`
    Midpoint,
    /// `j / (m - 1)`, including both ends of `[0, 1]`
    Endpoint,
}

impl NodeLayout {
    pub fn node(&self, j: usize, m: usize) -> f64 {
        match self {
            NodeLayout::Midpoint => (j as f64 + 0.5) / m as f64,
            NodeLayout::Endpoint => j as f64 / (m - 1) as f64,
        }
    }

    pub fn nodes(&self, m: usize) -> Vec<f64> {
        (0..m).map(|j| self.node(j, m)).collect()
    }

    /// Quadrature weights for `int_0^1 g(x) dx` from samples at the nodes:
    /// midpoint rule or trapezoid rule.
    pub fn weights(&self, m: usize) -> Vec<f64> {
        match self {
            NodeLayout::Midpoint => vec![1.0 / m as f64; m],
            NodeLayout::Endpoint => {
                let h = 1.0 / (m - 1) as f64;
                let mut w = vec![h; m];
                w[0] = 0.5 * h;
                w[m - 1] = 0.5 * h;
                w
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// `G(0) = lo` and `G(1) = hi` are imposed.
    #[serde(alias = "fixed")]
    FixedEndpoints,
    /// Only `lo <= G <= hi` is imposed; the support may shrink.
    #[default]
    Free,
}

impl SupportMode {
    pub fn label(&self) -> &'static str {
        match self {
            SupportMode::FixedEndpoints => "fixed_endpoints",
            SupportMode::Free => "free",
        }
    }
}

/// Non-decreasing samples of a quantile function on a probability grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFn {
    interval: Interval,
    layout: NodeLayout,
    values: Vec<f64>,
    support_mode: SupportMode,
}

impl QuantileFn {
    pub fn new(interval: Interval, layout: NodeLayout, values: Vec<f64>, support_mode: SupportMode) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("quantile needs at least 2 nodes"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("quantile value at {i} is not finite")));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::NonMonotone { index: i + 1 });
        }
        if support_mode == SupportMode::FixedEndpoints {
            let (first, last) = (values[0], values[values.len() - 1]);
            if (first - interval.lo()).abs() > 1e-9 || (last - interval.hi()).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "fixed-endpoint quantile must run from {} to {}, got {first}..{last}",
                    interval.lo(),
                    interval.hi()
                )));
            }
        }
        Ok(Self {
            interval,
            layout,
            values,
            support_mode,
        })
    }

    pub(crate) fn from_parts_unchecked(
        interval: Interval,
        layout: NodeLayout,
        values: Vec<f64>,
        support_mode: SupportMode,
    ) -> Self {
        Self {
            interval,
            layout,
            values,
            support_mode,
        }
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn layout(&self) -> NodeLayout {
        self.layout
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support_mode(&self) -> SupportMode {
        self.support_mode
    }

    pub fn probability_nodes(&self) -> Vec<f64> {
        self.layout.nodes(self.m())
    }

    /// Piecewise-linear interpolation in probability, with linear
    /// extrapolation for the midpoint layout.
    pub fn eval(&self, p: f64) -> f64 {
        let m = self.m();
        let t = match self.layout {
            NodeLayout::Midpoint => p * m as f64 - 0.5,
            NodeLayout::Endpoint => p * (m - 1) as f64,
        };
        let j = (t.floor().max(0.0) as usize).min(m - 2);
        let frac = t - j as f64;
        let v = self.values[j] + frac * (self.values[j + 1] - self.values[j]);
        v.clamp(self.interval.lo(), self.interval.hi())
    }

    /// CSV with columns `probability,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("probability,value\n");
        for (j, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.layout.node(j, self.m()), v);
        }
        out
    }
}

/// Quantile of `nu` at the midpoint probability nodes `(j + 1/2) / m`.
pub fn density_to_quantile(nu: &DiscreteDensity, m: usize) -> Result<QuantileFn> {
    density_to_quantile_with(nu, m, NodeLayout::Midpoint)
}

pub fn density_to_quantile_with(nu: &DiscreteDensity, m: usize, layout: NodeLayout) -> Result<QuantileFn> {
    if m < 2 {
        return Err(Error::invalid(format!("quantile resolution must be >= 2, got {m}")));
    }
    let cdf = nu.cdf_at_edges();
    let mut values: Vec<f64> = layout
        .nodes(m)
        .into_iter()
        .map(|p| quantile_eval(nu.grid(), &cdf, p))
        .collect();
    // guard against rounding in the inversion
    for j in 1..m {
        if values[j] < values[j - 1] {
            values[j] = values[j - 1];
        }
    }
    Ok(QuantileFn::from_parts_unchecked(
        nu.grid().interval(),
        layout,
        values,
        SupportMode::Free,
    ))
}

/// Spreads `mass` uniformly over `[a, b]` onto the cells of `grid`, splitting
/// by overlap length. A degenerate segment deposits into a single cell.
/// The deposited amounts sum to `mass` up to one rounding per cell.
pub(crate) fn deposit(masses: &mut [f64], grid: &Grid, a: f64, b: f64, mass: f64) {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let first = grid.cell_of(a);
    let last = grid.cell_of(b);
    let width = b - a;
    if first == last || width <= 1e-14 * grid.spacing() {
        masses[grid.cell_of(0.5 * (a + b))] += mass;
        return;
    }
    let mut placed = 0.0;
    for (k, slot) in (first..last).zip(&mut masses[first..last]) {
        let overlap = (grid.edge(k + 1).min(b) - grid.edge(k).max(a)).max(0.0);
        let share = mass * overlap / width;
        *slot += share;
        placed += share;
    }
    masses[last] += mass - placed;
}

/// Shape-preserving slopes for a monotone cubic Hermite interpolant.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..m - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if m == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; m];
    for k in 1..m - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| -> f64 {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[m - 1] = end(h[m - 2], h[m - 3], delta[m - 2], delta[m - 3]);
    d
}

/// Probability `x` at which the monotone cubic interpolant of `(xs, ys)`
/// reaches `level`, clamped to `[xs[0], xs[m-1]]`.
fn pchip_inverse(xs: &[f64], ys: &[f64], d: &[f64], level: f64) -> f64 {
    let m = xs.len();
    if level <= ys[0] {
        return xs[0];
    }
    if level >= ys[m - 1] {
        return xs[m - 1];
    }
    // ys[j] <= level < ys[j + 1]
    let j = ys.partition_point(|&y| y <= level) - 1;
    let h = xs[j + 1] - xs[j];
    let eval = |t: f64| -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * ys[j]
            + (t3 - 2.0 * t2 + t) * h * d[j]
            + (-2.0 * t3 + 3.0 * t2) * ys[j + 1]
            + (t3 - t2) * h * d[j + 1]
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    xs[j] + 0.5 * (lo + hi) * h
}

/// Density whose quantile interpolates `G` by a monotone cubic: the mass
/// between consecutive probability nodes is spread over the corresponding
/// value range along that interpolant. Flat pieces of `G` put their mass in
/// a single cell.
///
/// For the midpoint layout the half-cells `[0, 1/(2m)]` and
/// `[1 - 1/(2m), 1]` are filled by linear extrapolation, clamped to the
/// interval.
pub fn quantile_to_density(g: &QuantileFn, grid: &Grid) -> Result<DiscreteDensity> {
    let iv = grid.interval();
    let slack = iv.slack();
    let vals = g.values();
    for &v in vals {
        if v < iv.lo() - slack || v > iv.hi() + slack {
            return Err(Error::QuantileLeavesDomain {
                value: v,
                lo: iv.lo(),
                hi: iv.hi(),
            });
        }
    }
    if let Some(i) = vals.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::NonMonotone { index: i + 1 });
    }
    let clamp = |x: f64| x.clamp(iv.lo(), iv.hi());
    let m = vals.len();
    let ys: Vec<f64> = vals.iter().map(|&v| clamp(v)).collect();
    let xs = g.layout().nodes(m);
    let d = pchip_slopes(&xs, &ys);
    let n = grid.n();
    let mut masses = vec![0.0; n];
    let mut prev = xs[0];
    for (i, mass) in masses.iter_mut().enumerate() {
        let next = if i + 1 == n {
            xs[m - 1]
        } else {
            pchip_inverse(&xs, &ys, &d, grid.edge(i + 1))
        };
        *mass = next - prev;
        prev = next;
    }
    if g.layout() == NodeLayout::Midpoint {
        let half = 0.5 / m as f64;
        let left_ext = clamp(ys[0] - 0.5 * (ys[1] - ys[0]));
        let right_ext = clamp(ys[m - 1] + 0.5 * (ys[m - 1] - ys[m - 2]));
        deposit(&mut masses, grid, left_ext, ys[0], half);
        deposit(&mut masses, grid, ys[m - 1], right_ext, half);
    }
    let dx = grid.spacing();
    DiscreteDensity::normalized(*grid, masses.into_iter().map(|w| w / dx).collect())
}

/// Image measure `T # mu` on the grid of `mu`.
pub fn pushforward(map: &[f64], mu: &DiscreteDensity) -> Result<DiscreteDensity> {
    pushforward_onto(map, mu, mu.grid())
}

/// Image measure `T # mu` binned onto `target`.
///
/// `map` holds `T` at the nodes of `mu`'s grid. Cell `i` of `mu` is sent to
/// the segment between the values of `T` at its two edges (linear
/// interpolation between nodes, linear extrapolation at the ends), and its
/// mass is split over target cells by overlap length.
pub fn pushforward_onto(map: &[f64], mu: &DiscreteDensity, target: &Grid) -> Result<DiscreteDensity> {
    let grid = mu.grid();
    let n = grid.n();
    if map.len() != n {
        return Err(Error::invalid(format!(
            "map has {} values for a grid of {n} cells",
            map.len()
        )));
    }
    let iv = target.interval();
    let slack = iv.slack();
    for &t in map {
        if !t.is_finite() || t < iv.lo() - slack || t > iv.hi() + slack {
            return Err(Error::MapLeavesDomain {
                value: t,
                lo: iv.lo(),
                hi: iv.hi(),
            });
        }
    }
    let clamp = |x: f64| x.clamp(iv.lo(), iv.hi());
    // T at cell edges
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(clamp(map[0] - 0.5 * (map[1] - map[0])));
    for i in 0..n - 1 {
        edges.push(clamp(0.5 * (map[i] + map[i + 1])));
    }
    edges.push(clamp(map[n - 1] + 0.5 * (map[n - 1] - map[n - 2])));

    let mut masses = vec![0.0; target.n()];
    for (i, m) in mu.cell_masses().into_iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let (a, b) = (edges[i], edges[i + 1]);
        let (lo, hi) = (a.min(b).min(clamp(map[i])), a.max(b).max(clamp(map[i])));
        if (b - a).abs() < 1e-14 * target.spacing() {
            masses[target.cell_of(clamp(map[i]))] += m;
        } else {
            deposit(&mut masses, target, lo, hi, m);
        }
    }
    let dx = target.spacing();
    DiscreteDensity::normalized(*target, masses.into_iter().map(|w| w / dx).collect())
}

/// Parses a `node,value` CSV (header optional) into values on `grid`.
pub fn density_from_csv(grid: Grid, text: &str) -> Result<DiscreteDensity> {
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let last = fields.last().copied().unwrap_or("");
        match last.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if lineno == 0 => continue,
            Err(_) => {
                return Err(Error::invalid(format!(
                    "line {}: cannot parse density value '{last}'",
                    lineno + 1
                )))
            }
        }
    }
    DiscreteDensity::normalized(grid, values)
}
