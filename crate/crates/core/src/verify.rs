//! Independent certificates for computed equilibria and for the transport
//! identities the solvers rely on.

use serde::Serialize;

use crate::energy::{first_variation, CongestionSpec};
use crate::error::{Error, Result};
use crate::measures::{DiscreteDensity, NodeLayout};
use crate::solver::{objective_terms, Scenario};
use crate::transport::{
    kantorovich_potential_1d, monotone_coupling, monotone_map_1d, solve_lp, wasserstein_cost_1d, Atoms, CostSpec,
};

/// Relative positivity cutoff for "nu > 0".
pub const ACTIVE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Largest violation of `phi^c + V >= M`.
    pub residual_sup: f64,
    /// Largest deviation from `phi^c + V = M` where `nu > epsilon`.
    pub residual_eq: f64,
    pub m: f64,
    pub epsilon: f64,
    /// Cells used for the equality test.
    pub active_cells: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Residual of `level >= M` with equality on `{nu > epsilon}`.
///
/// The first and last grid cells, and cells next to an edge of the active
/// set, are left out of both norms: there the cell averages straddle a
/// boundary and do not sample a smooth profile.
pub fn level_residual(level: &[f64], nu: &DiscreteDensity) -> ResidualReport {
    let n = level.len();
    let epsilon = ACTIVE_THRESHOLD * nu.max();
    let active: Vec<bool> = nu.values().iter().map(|&v| v > epsilon).collect();
    let interior = |i: usize| i > 0 && i + 1 < n;
    let edge = |i: usize| interior(i) && (active[i - 1] != active[i] || active[i + 1] != active[i]);
    let eq_cells: Vec<usize> = (0..n).filter(|&i| interior(i) && active[i] && !edge(i)).collect();
    let mut pool: Vec<f64> = eq_cells.iter().map(|&i| level[i]).collect();
    if pool.is_empty() {
        pool = (0..n).filter(|&i| active[i]).map(|i| level[i]).collect();
    }
    let m = median(pool);
    let residual_eq = eq_cells.iter().map(|&i| (level[i] - m).abs()).fold(0.0, f64::max);
    let residual_sup = (0..n)
        .filter(|&i| interior(i) && !edge(i))
        .map(|i| {
            let gap = m - level[i];
            if gap.is_nan() {
                f64::INFINITY
            } else {
                gap.max(0.0)
            }
        })
        .fold(0.0, f64::max);
    ResidualReport {
        residual_sup,
        residual_eq,
        m,
        epsilon,
        active_cells: eq_cells.len(),
    }
}

/// `phi^c + V[nu]` on the grid, optionally plus a tax.
pub fn equilibrium_level(scenario: &Scenario, nu: &DiscreteDensity, extra: Option<&[f64]>) -> Result<Vec<f64>> {
    if nu.grid() != scenario.grid() {
        return Err(Error::invalid("density is not on the scenario grid"));
    }
    let pair = kantorovich_potential_1d(scenario.mu(), nu, scenario.cost(), None)?;
    let v = first_variation(scenario.model(), nu)?;
    let mut level: Vec<f64> = pair.phi_c.iter().zip(&v).map(|(a, b)| a + b).collect();
    if let Some(t) = extra {
        if t.len() != level.len() {
            return Err(Error::invalid("tax vector does not match the grid"));
        }
        for (l, x) in level.iter_mut().zip(t) {
            *l += x;
        }
    }
    Ok(level)
}

/// First-order equilibrium condition `phi^c + V[nu] >= M`, with equality
/// on `{nu > 1e-6 max nu}`.
pub fn equilibrium_residual(scenario: &Scenario, nu: &DiscreteDensity) -> Result<ResidualReport> {
    let level = equilibrium_level(scenario, nu, None)?;
    Ok(level_residual(&level, nu))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurityReport {
    pub pure: bool,
    pub atoms: usize,
    /// Cost of the plan induced by the monotone map.
    pub map_cost: f64,
    pub lp_value: f64,
    pub gap: f64,
    /// Whether the LP's own optimal plan has monotone (graph-like) support.
    pub lp_plan_monotone: bool,
}

fn atomize(nu: &DiscreteDensity, max_atoms: usize) -> (Vec<f64>, Vec<f64>) {
    let n = nu.grid().n();
    let k = n.div_ceil(max_atoms);
    let nodes = nu.grid().nodes();
    let masses = nu.cell_masses();
    let mut locs = Vec::new();
    let mut weights = Vec::new();
    for start in (0..n).step_by(k) {
        let end = (start + k).min(n);
        locs.push(nodes[start..end].iter().sum::<f64>() / (end - start) as f64);
        weights.push(masses[start..end].iter().sum::<f64>());
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (locs, weights)
}

/// Checks that the monotone map from `mu` to `nu` is optimal on an atomized
/// instance with at most 64 atoms per side, and that the LP's own optimal
/// plan is supported on a monotone graph.
pub fn purity_check_with(mu: &DiscreteDensity, nu: &DiscreteDensity, cost: &CostSpec) -> Result<PurityReport> {
    cost.check_strictly_convex(mu.grid().interval().length())?;
    monotone_map_1d(mu, nu)?;
    let (xa, wa) = atomize(mu, 64);
    let (xb, wb) = atomize(nu, 64);
    let costs: Vec<Vec<f64>> = xa
        .iter()
        .map(|&x| xb.iter().map(|&y| cost.cost(x, y)).collect())
        .collect();
    let plan = monotone_coupling(&wa, &wb);
    let map_cost = plan.cost_with(&costs);
    let lp = solve_lp(&Atoms::new(xa.clone(), wa)?, &Atoms::new(xb, wb)?, cost)?;
    let gap = (map_cost - lp.value).abs();
    let lp_plan_monotone = lp.plan.is_monotone(1e-12);
    Ok(PurityReport {
        pure: gap <= 1e-8 && lp_plan_monotone,
        atoms: xa.len(),
        map_cost,
        lp_value: lp.value,
        gap,
        lp_plan_monotone,
    })
}

pub fn purity_check(scenario: &Scenario, nu: &DiscreteDensity) -> Result<PurityReport> {
    purity_check_with(scenario.mu(), nu, scenario.cost())
}

/// Relative sup residual of the one-dimensional Monge-Ampere equation
/// `mu = u'' exp(-u'^2/2 + x u' - u - int phi(u'(x), u'(z)) dmu(z))` with
/// `u' = T` the monotone map from `mu` to `nu`.
///
/// `u` is integrated from the left node and then shifted so that both sides
/// carry the same mass over the interior nodes, which fixes the additive
/// constant of the equation to one.
pub fn monge_ampere_residual_1d(scenario: &Scenario, nu: &DiscreteDensity) -> Result<f64> {
    if !matches!(scenario.model().congestion, CongestionSpec::Entropy { .. }) {
        return Err(Error::Precondition(
            "Monge-Ampere form needs entropy congestion (f = log)".into(),
        ));
    }
    if !scenario.cost().is_quadratic() {
        return Err(Error::Precondition("Monge-Ampere form needs the quadratic cost".into()));
    }
    if scenario.model().potential.is_some() {
        return Err(Error::Precondition(
            "Monge-Ampere form assumes no potential (v = 0)".into(),
        ));
    }
    if let Some(i) = nu.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::Precondition(format!("nu must be positive (cell {i} is not)")));
    }
    let mu = scenario.mu();
    let t = monotone_map_1d(mu, nu)?;
    let grid = mu.grid();
    let n = grid.n();
    if n < 3 {
        return Err(Error::invalid("need at least 3 cells"));
    }
    let x = grid.nodes();
    let dx = grid.spacing();
    let mut u = vec![0.0; n];
    for i in 1..n {
        u[i] = u[i - 1] + 0.5 * dx * (t[i - 1] + t[i]);
    }
    let inter = match &scenario.model().kernel {
        None => vec![0.0; n],
        Some(k) => k.field(&t, &mu.cell_masses(), false).0,
    };
    let raw: Vec<f64> = (1..n - 1)
        .map(|i| {
            let upp = (t[i + 1] - t[i - 1]) / (2.0 * dx);
            upp * (-0.5 * t[i] * t[i] + x[i] * t[i] - u[i] - inter[i]).exp()
        })
        .collect();
    let target: f64 = mu.values()[1..n - 1].iter().sum();
    let have: f64 = raw.iter().sum();
    if !(have > 0.0 && have.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let scale = target / have;
    let peak = mu.values()[1..n - 1].iter().fold(0.0_f64, |a, b| a.max(*b));
    Ok(raw
        .iter()
        .zip(&mu.values()[1..n - 1])
        .map(|(r, m)| (scale * r - m).abs())
        .fold(0.0, f64::max)
        / peak)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    /// `(1 - t) J(nu_a) + t J(nu_b)`
    pub chord: Vec<f64>,
    pub max_violation: f64,
    /// `(J(nu_a) + J(nu_b)) / 2 - J(nu_{1/2})`
    pub midpoint_margin: f64,
    /// The same margin for the transport term alone.
    pub transport_midpoint_margin: f64,
}

/// Evaluates the objective along the generalized geodesic with base `mu`
/// between `nu_a` and `nu_b`. In one dimension its quantile is the linear
/// interpolation `(1 - t) G_a + t G_b`.
pub fn displacement_convexity_probe(
    scenario: &Scenario,
    nu_a: &DiscreteDensity,
    nu_b: &DiscreteDensity,
    t_grid: &[f64],
) -> Result<ConvexityReport> {
    let ga = scenario.quantile_of(nu_a)?;
    let gb = scenario.quantile_of(nu_b)?;
    let at = |t: f64| -> Result<crate::solver::Terms> {
        let vals: Vec<f64> = ga
            .values()
            .iter()
            .zip(gb.values())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        let g = crate::measures::QuantileFn::new(
            scenario.interval(),
            NodeLayout::Endpoint,
            vals,
            crate::measures::SupportMode::Free,
        )?;
        objective_terms(scenario, &g)
    };
    let (ta, tb, tm) = (at(0.0)?, at(1.0)?, at(0.5)?);
    let (ja, jb) = (ta.total(), tb.total());
    let mut values = Vec::with_capacity(t_grid.len());
    let mut chord = Vec::with_capacity(t_grid.len());
    let mut max_violation: f64 = 0.0;
    for &t in t_grid {
        let v = at(t)?.total();
        let c = (1.0 - t) * ja + t * jb;
        max_violation = max_violation.max(v - c);
        values.push(v);
        chord.push(c);
    }
    Ok(ConvexityReport {
        t: t_grid.to_vec(),
        values,
        chord,
        max_violation,
        midpoint_margin: 0.5 * (ja + jb) - tm.total(),
        transport_midpoint_margin: 0.5 * (ta.transport + tb.transport) - tm.transport,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub eps: Vec<f64>,
    pub quotients: Vec<f64>,
    /// `int phi^c d(rho - nu)`
    pub predicted: f64,
    pub errors: Vec<f64>,
    /// `|int phi dmu + int phi^c dnu - W_c(mu, nu)|`
    pub duality_gap: f64,
}

/// Piecewise-constant density on a grid `k` times finer; the measure is
/// unchanged.
fn refine(nu: &DiscreteDensity, k: usize) -> Result<DiscreteDensity> {
    let grid = crate::measures::Grid::new(nu.grid().interval(), nu.grid().n() * k)?;
    let values = nu.values().iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
    DiscreteDensity::new(grid, values)
}

/// Grid refinement used for the potential in [`transport_derivative_check`].
const POTENTIAL_REFINEMENT: usize = 8;

/// Difference quotients of `eps -> W_c(mu, nu + eps (rho - nu))` at zero
/// against `int phi^c d(rho - nu)`. The potential is computed on a finer
/// copy of the grid so that its quadrature error stays below the
/// first-order term for `eps` down to about `1e-4`.
pub fn transport_derivative_check(
    mu: &DiscreteDensity,
    nu: &DiscreteDensity,
    rho: &DiscreteDensity,
    cost: &CostSpec,
    eps_list: &[f64],
) -> Result<DerivativeReport> {
    if nu.grid() != rho.grid() {
        return Err(Error::invalid("nu and rho must share a grid"));
    }
    let m = 64 * nu.grid().n();
    let (mu_f, nu_f, rho_f) = (
        refine(mu, POTENTIAL_REFINEMENT)?,
        refine(nu, POTENTIAL_REFINEMENT)?,
        refine(rho, POTENTIAL_REFINEMENT)?,
    );
    let pair = kantorovich_potential_1d(&mu_f, &nu_f, cost, None)?;
    let dx = nu_f.grid().spacing();
    let predicted: f64 = pair
        .phi_c
        .iter()
        .zip(rho_f.values().iter().zip(nu_f.values()))
        .map(|(p, (r, v))| p * (r - v))
        .sum::<f64>()
        * dx;
    let base = wasserstein_cost_1d(mu, nu, cost, m)?;
    let mut quotients = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mixed: Vec<f64> = nu
            .values()
            .iter()
            .zip(rho.values())
            .map(|(v, r)| (1.0 - eps) * v + eps * r)
            .collect();
        let nu_eps = DiscreteDensity::normalized(*nu.grid(), mixed)?;
        quotients.push((wasserstein_cost_1d(mu, &nu_eps, cost, m)? - base) / eps);
    }
    let errors = quotients.iter().map(|q| (q - predicted).abs()).collect();
    Ok(DerivativeReport {
        eps: eps_list.to_vec(),
        quotients,
        predicted,
        errors,
        duality_gap: (pair.dual_value(&mu_f, &nu_f) - base).abs(),
    })
}
