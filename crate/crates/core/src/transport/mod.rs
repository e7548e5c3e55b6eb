//! Optimal transport on the line.
//!
//! Costs are translation invariant, `c(x, y) = C(x - y)` with `C` strictly
//! convex, so the monotone (quantile) coupling is optimal and every cost
//! reduces to an integral over quantile functions. [`lp`] holds an exact
//! linear-programming oracle that knows nothing about this structure.

pub mod lp;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::{density_to_quantile, DiscreteDensity, Grid};

pub use lp::{monotone_coupling, solve_lp, solve_lp_with_costs, Atoms, LpSolution, TransportPlan};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Transport cost `c(x, y) = C(x - y)`.
#[derive(Clone)]
pub enum CostSpec {
    /// `c(x, y) = |x - y|^2 / 2`
    Quadratic,
    /// `c(x, y) = C(x - y)` with `C` supplied together with its derivative.
    ConvexDifference {
        name: String,
        profile: ScalarFn,
        derivative: ScalarFn,
    },
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSpec::Quadratic => f.write_str("Quadratic"),
            CostSpec::ConvexDifference { name, .. } => write!(f, "ConvexDifference({name})"),
        }
    }
}

impl CostSpec {
    pub fn quadratic() -> Self {
        CostSpec::Quadratic
    }

    /// `C(t) = |t|^p`, strictly convex for `p > 1`.
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::invalid(format!("power cost needs p > 1, got {p}")));
        }
        Ok(CostSpec::ConvexDifference {
            name: format!("|t|^{p}"),
            profile: Arc::new(move |t: f64| t.abs().powf(p)),
            derivative: Arc::new(move |t: f64| p * t.abs().powf(p - 1.0) * t.signum()),
        })
    }

    /// Arbitrary profile `C` with derivative `C'`. Convexity is checked by
    /// [`CostSpec::check_strictly_convex`] wherever it matters.
    pub fn convex_difference(
        name: impl Into<String>,
        profile: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CostSpec::ConvexDifference {
            name: name.into(),
            profile: Arc::new(profile),
            derivative: Arc::new(derivative),
        }
    }

    pub fn label(&self) -> String {
        match self {
            CostSpec::Quadratic => "quadratic".to_string(),
            CostSpec::ConvexDifference { name, .. } => name.clone(),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, CostSpec::Quadratic)
    }

    /// `C(t)`
    pub fn profile(&self, t: f64) -> f64 {
        match self {
            CostSpec::Quadratic => 0.5 * t * t,
            CostSpec::ConvexDifference { profile, .. } => profile(t),
        }
    }

    /// `C'(t)`
    pub fn profile_derivative(&self, t: f64) -> f64 {
        match self {
            CostSpec::Quadratic => t,
            CostSpec::ConvexDifference { derivative, .. } => derivative(t),
        }
    }

    pub fn cost(&self, x: f64, y: f64) -> f64 {
        self.profile(x - y)
    }

    /// `d/dx c(x, y)`
    pub fn dx(&self, x: f64, y: f64) -> f64 {
        self.profile_derivative(x - y)
    }

    /// Probe-based check that `C` is strictly convex on `[-span, span]` and
    /// that `C'` matches a finite difference of `C`. Necessary, not
    /// sufficient.
    pub fn check_strictly_convex(&self, span: f64) -> Result<()> {
        if self.is_quadratic() {
            return Ok(());
        }
        let k = 24;
        let pts: Vec<f64> = (0..=2 * k).map(|i| span * (i as f64 - k as f64) / k as f64).collect();
        for (i, &a) in pts.iter().enumerate() {
            for &b in &pts[i + 1..] {
                let mid = self.profile(0.5 * (a + b));
                let chord = 0.5 * (self.profile(a) + self.profile(b));
                if !(mid < chord) {
                    return Err(Error::CostNotStrictlyConvex(format!(
                        "{}: midpoint test fails on [{a}, {b}]",
                        self.label()
                    )));
                }
            }
        }
        for &t in &pts {
            let h = 1e-6 * span.max(1.0);
            let fd = (self.profile(t + h) - self.profile(t - h)) / (2.0 * h);
            let d = self.profile_derivative(t);
            if (fd - d).abs() > 1e-4 * (1.0 + d.abs()) {
                return Err(Error::CostNotStrictlyConvex(format!(
                    "{}: derivative {d} disagrees with finite difference {fd} at {t}",
                    self.label()
                )));
            }
        }
        Ok(())
    }
}

fn same_interval(mu: &DiscreteDensity, nu: &DiscreteDensity) -> Result<()> {
    if mu.grid().interval() != nu.grid().interval() {
        return Err(Error::invalid("measures live on different intervals"));
    }
    Ok(())
}

/// `W_2^2(mu, nu) = int_0^1 |G - H|^2`, midpoint rule at resolution `m`.
pub fn w2_squared_1d(mu: &DiscreteDensity, nu: &DiscreteDensity, m: usize) -> Result<f64> {
    same_interval(mu, nu)?;
    let h = density_to_quantile(mu, m)?;
    let g = density_to_quantile(nu, m)?;
    Ok(h.values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / m as f64)
}

/// Cost of the monotone coupling, `int_0^1 C(H - G)`, which is the optimal
/// transport cost for strictly convex `C`.
pub fn wasserstein_cost_1d(mu: &DiscreteDensity, nu: &DiscreteDensity, cost: &CostSpec, m: usize) -> Result<f64> {
    same_interval(mu, nu)?;
    cost.check_strictly_convex(mu.grid().interval().length())?;
    let h = density_to_quantile(mu, m)?;
    let g = density_to_quantile(nu, m)?;
    Ok(h.values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| cost.profile(a - b))
        .sum::<f64>()
        / m as f64)
}

/// `phi^c(y) = min_x { c(x, y) - phi(x) }` over the source nodes. Ties go to
/// the smallest source index.
pub fn c_transform(phi: &[f64], source: &[f64], cost: &CostSpec, target: &[f64]) -> Vec<f64> {
    assert_eq!(phi.len(), source.len(), "phi must be sampled at the source nodes");
    target
        .iter()
        .map(|&y| {
            let mut best = f64::INFINITY;
            for (&x, &p) in source.iter().zip(phi) {
                let val = cost.cost(x, y) - p;
                if val < best {
                    best = val;
                }
            }
            best
        })
        .collect()
}

/// Monotone rearrangement `T = G_nu o F_mu` at the nodes of `mu`'s grid.
pub fn monotone_map_1d(mu: &DiscreteDensity, nu: &DiscreteDensity) -> Result<Vec<f64>> {
    same_interval(mu, nu)?;
    ensure_positive(mu)?;
    let cdf_mu = mu.cdf_at_edges();
    let cdf_nu = nu.cdf_at_edges();
    let grid = mu.grid();
    let mut t: Vec<f64> = (0..grid.n())
        .map(|i| {
            let p = 0.5 * (cdf_mu[i] + cdf_mu[i + 1]);
            crate::measures::quantile_eval(nu.grid(), &cdf_nu, p)
        })
        .collect();
    for i in 1..t.len() {
        if t[i] < t[i - 1] {
            t[i] = t[i - 1];
        }
    }
    Ok(t)
}

pub(crate) fn ensure_positive(mu: &DiscreteDensity) -> Result<()> {
    if let Some((cell, &value)) = mu.values().iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::SourceNotPositive { cell, value });
    }
    Ok(())
}

/// Kantorovich potential `phi` on the source grid (normalized by
/// `phi[anchor] = 0`) and its c-transform on the target grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub phi: Vec<f64>,
    pub phi_c: Vec<f64>,
    pub anchor_index: usize,
}

impl PotentialPair {
    /// `int phi dmu + int phi^c dnu`
    pub fn dual_value(&self, mu: &DiscreteDensity, nu: &DiscreteDensity) -> f64 {
        let a: f64 = self.phi.iter().zip(mu.values()).map(|(p, m)| p * m).sum();
        let b: f64 = self.phi_c.iter().zip(nu.values()).map(|(p, m)| p * m).sum();
        a * mu.grid().spacing() + b * nu.grid().spacing()
    }

    /// Adds `k` to `phi` (so `phi^c` moves by `-k`).
    pub fn shifted(&self, k: f64) -> Self {
        Self {
            phi: self.phi.iter().map(|p| p + k).collect(),
            phi_c: self.phi_c.iter().map(|p| p - k).collect(),
            anchor_index: self.anchor_index,
        }
    }

    /// Largest violation of `phi(x) + phi^c(y) <= c(x, y)`.
    pub fn feasibility_violation(&self, source: &[f64], target: &[f64], cost: &CostSpec) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (&x, &p) in source.iter().zip(&self.phi) {
            for (&y, &q) in target.iter().zip(&self.phi_c) {
                worst = worst.max(p + q - cost.cost(x, y));
            }
        }
        worst.max(0.0)
    }

    /// CSV with columns `node,phi,phi_c` (source and target grids coincide).
    pub fn to_csv(&self, nodes: &[f64]) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("node,phi,phi_c\n");
        for ((x, p), q) in nodes.iter().zip(&self.phi).zip(&self.phi_c) {
            let _ = writeln!(out, "{x},{p},{q}");
        }
        out
    }
}

/// Integrates `phi'(x) = C'(x - T(x))` from the anchor with the trapezoid
/// rule and takes the c-transform onto the grid of `nu`.
pub fn kantorovich_potential_1d(
    mu: &DiscreteDensity,
    nu: &DiscreteDensity,
    cost: &CostSpec,
    anchor: Option<usize>,
) -> Result<PotentialPair> {
    let t = monotone_map_1d(mu, nu)?;
    let grid: &Grid = mu.grid();
    let n = grid.n();
    let anchor = anchor.unwrap_or(0);
    if anchor >= n {
        return Err(Error::invalid(format!("anchor {anchor} outside grid of {n} cells")));
    }
    let xs = grid.nodes();
    let slope: Vec<f64> = xs.iter().zip(&t).map(|(&x, &tx)| cost.dx(x, tx)).collect();
    let dx = grid.spacing();
    let mut phi = vec![0.0; n];
    for i in anchor + 1..n {
        phi[i] = phi[i - 1] + 0.5 * dx * (slope[i - 1] + slope[i]);
    }
    for i in (0..anchor).rev() {
        phi[i] = phi[i + 1] - 0.5 * dx * (slope[i] + slope[i + 1]);
    }
    let phi_c = c_transform(&phi, &xs, cost, &nu.grid().nodes());
    Ok(PotentialPair {
        phi,
        phi_c,
        anchor_index: anchor,
    })
}
