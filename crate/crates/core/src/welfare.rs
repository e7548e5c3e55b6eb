//! Social cost, its minimizer, corrective taxes and the cost of anarchy.
//!
//! `SC[nu] = W_c(mu, nu) + int f(nu) dnu + int v dnu + iint phi dnu dnu`.
//! The interaction is counted in full, and congestion enters through the
//! total cost `f(nu) nu` instead of its primitive.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{quantile_to_density, DiscreteDensity};
use crate::solver::objective::{Integrand, QuantileProblem};
use crate::solver::{
    descend, initial_values, minimize_quantile, quantile_fn, EquilibriumResult, Scenario, SolverParams,
};
use crate::transport::wasserstein_cost_1d;
use crate::verify::{equilibrium_level, level_residual, ResidualReport};

/// Absolute tolerance under which the equilibrium and optimal social costs
/// count as equal.
pub const WELFARE_TIE: f64 = 1e-9;

fn check_grid(scenario: &Scenario, nu: &DiscreteDensity) -> Result<()> {
    if nu.grid() != scenario.grid() {
        return Err(Error::invalid("density is not on the scenario grid"));
    }
    Ok(())
}

/// `f(s) s` with `0 log 0 = 0`.
fn total_congestion(scenario: &Scenario, s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        scenario.model().congestion.f(s) * s
    }
}

/// Social cost of `nu` on the grid. The transport term uses the same
/// quadrature as [`crate::solver::j_density`], so the difference of the two
/// is exactly the congestion and interaction surplus.
pub fn social_cost(scenario: &Scenario, nu: &DiscreteDensity) -> Result<f64> {
    check_grid(scenario, nu)?;
    let model = scenario.model();
    let dx = scenario.grid().spacing();
    let transport = wasserstein_cost_1d(scenario.mu(), nu, scenario.cost(), 16 * scenario.grid().n())?;
    let congestion: f64 = nu.values().iter().map(|&s| total_congestion(scenario, s)).sum::<f64>() * dx;
    let potential: f64 = model
        .potential_values()
        .iter()
        .zip(nu.values())
        .map(|(v, s)| v * s)
        .sum::<f64>()
        * dx;
    let interaction = match &model.kernel {
        None => 0.0,
        Some(k) => k.pair_energy(&scenario.grid().nodes(), &nu.cell_masses()),
    };
    let total = transport + congestion + potential + interaction;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("social cost = {total}")));
    }
    Ok(total)
}

/// Social cost of a quantile on the solver nodes.
pub fn social_cost_quantile(scenario: &Scenario, g: &crate::measures::QuantileFn) -> Result<f64> {
    let h = scenario.source_values(g.m())?;
    Ok(QuantileProblem::new(scenario, Integrand::Social, &h).value(g.values()))
}

/// `f(nu) nu - F(nu) + int phi(y, z) dnu(z)`. Its congestion part depends on
/// the normalization of `F`.
pub fn tax_paper(scenario: &Scenario, nu: &DiscreteDensity) -> Result<Vec<f64>> {
    check_grid(scenario, nu)?;
    let congestion = &scenario.model().congestion;
    let field = scenario.model().interaction_field(nu);
    Ok(nu
        .values()
        .iter()
        .zip(&field)
        .map(|(&s, u)| total_congestion(scenario, s) - congestion.primitive(s) + u)
        .collect())
}

/// Marginal external cost `nu f'(nu) + int phi(y, z) dnu(z)`: the gap
/// between the first variations of the social cost and of the energy.
pub fn tax_marginal(scenario: &Scenario, nu: &DiscreteDensity) -> Result<Vec<f64>> {
    check_grid(scenario, nu)?;
    let congestion = &scenario.model().congestion;
    let inada = congestion.satisfies_inada();
    let field = scenario.model().interaction_field(nu);
    Ok(nu
        .values()
        .iter()
        .zip(&field)
        .map(|(&s, u)| {
            let own = match congestion {
                crate::energy::CongestionSpec::Entropy { .. } => 1.0,
                _ if s == 0.0 && !inada => 0.0,
                c => s * c.f_prime(s),
            };
            own + u
        })
        .collect())
}

/// First-order condition of the game taxed by `tax`, evaluated at `nu`:
/// the largest deviation of `phi^c + V[nu] + tax` from its median over the
/// support.
pub fn taxed_stationarity_residual(scenario: &Scenario, nu: &DiscreteDensity, tax: &[f64]) -> Result<f64> {
    Ok(taxed_report(scenario, nu, tax)?.residual_eq)
}

fn taxed_report(scenario: &Scenario, nu: &DiscreteDensity, tax: &[f64]) -> Result<ResidualReport> {
    let level = equilibrium_level(scenario, nu, Some(tax))?;
    Ok(level_residual(&level, nu))
}

/// Minimizer of the social cost, by the same projected gradient method as
/// the equilibrium. `j_value` holds the optimal social cost and the
/// residuals are those of the game taxed by [`tax_marginal`].
pub fn minimize_social_cost(scenario: &Scenario, params: &SolverParams) -> Result<EquilibriumResult> {
    let start = initial_values(scenario, None)?;
    let h = scenario.source_values(scenario.quantile_m())?;
    let problem = QuantileProblem::new(scenario, Integrand::Social, &h);
    let run = descend(&problem, start, params)?;
    let g = quantile_fn(scenario, run.g);
    let nu = quantile_to_density(&g, scenario.grid())?;
    let tax = tax_marginal(scenario, &nu)?;
    let report = taxed_report(scenario, &nu, &tax)?;
    Ok(EquilibriumResult {
        nu,
        g,
        j_value: run.value,
        multiplier: report.m,
        residual_sup: report.residual_sup,
        residual_eq: report.residual_eq,
        iterations: run.iterations,
        converged: run.converged,
        grad_norm: run.grad_norm,
        history: run.history,
        metadata: scenario.metadata(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WelfareReport {
    pub sc_equilibrium: f64,
    pub sc_optimum: f64,
    pub cost_of_anarchy: f64,
    pub tax_paper: Vec<f64>,
    pub tax_marginal: Vec<f64>,
    pub stationarity_residual_paper: f64,
    pub stationarity_residual_marginal: f64,
    /// Social costs of the two densities evaluated on the grid.
    pub sc_equilibrium_grid: f64,
    pub sc_optimum_grid: f64,
    pub equilibrium_converged: bool,
    pub optimum_converged: bool,
    /// Set when uniqueness of the equilibrium is not guaranteed; the ratio
    /// is then only a lower bound on the worst case.
    pub warning: Option<String>,
    #[serde(skip)]
    pub equilibrium: DiscreteDensity,
    #[serde(skip)]
    pub optimum: DiscreteDensity,
}

impl WelfareReport {
    /// CSV with columns `node,tax_paper,tax_marginal`.
    pub fn taxes_csv(&self) -> String {
        use std::fmt::Write as _;
        let nodes = self.optimum.grid().nodes();
        let mut out = String::from("node,tax_paper,tax_marginal\n");
        for ((y, a), b) in nodes.iter().zip(&self.tax_paper).zip(&self.tax_marginal) {
            let _ = writeln!(out, "{y},{a},{b}");
        }
        out
    }
}

/// `sc_eq / sc_opt` for a positive optimum. Social costs can be zero or
/// negative (entropy congestion), where the ratio loses meaning: equal
/// costs then give one, and otherwise the relative excess
/// `1 + (sc_eq - sc_opt) / |sc_opt|` is reported.
pub fn anarchy_ratio(sc_eq: f64, sc_opt: f64) -> f64 {
    let gap = sc_eq - sc_opt;
    if gap.abs() <= WELFARE_TIE * (1.0 + sc_opt.abs()) {
        return 1.0;
    }
    if sc_opt > 0.0 {
        sc_eq / sc_opt
    } else if sc_opt == 0.0 {
        if gap > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 + gap / sc_opt.abs()
    }
}

/// Equilibrium against social optimum. Both social costs are evaluated on
/// the solver's quantile nodes, where the optimum is an exact minimizer.
pub fn cost_of_anarchy(scenario: &Scenario, params: &SolverParams) -> Result<WelfareReport> {
    let eq = minimize_quantile(scenario, params, None)?;
    let opt = minimize_social_cost(scenario, params)?;
    let sc_equilibrium = social_cost_quantile(scenario, &eq.g)?;
    let sc_optimum = opt.j_value;
    let tax_p = tax_paper(scenario, &opt.nu)?;
    let tax_m = tax_marginal(scenario, &opt.nu)?;
    let warning = (!scenario.model().displacement_convex()).then(|| {
        "structural convexity checks failed: the equilibrium may not be unique and the ratio is computed for the equilibrium found"
            .to_string()
    });
    Ok(WelfareReport {
        cost_of_anarchy: anarchy_ratio(sc_equilibrium, sc_optimum),
        sc_equilibrium,
        sc_optimum,
        stationarity_residual_paper: taxed_stationarity_residual(scenario, &opt.nu, &tax_p)?,
        stationarity_residual_marginal: taxed_stationarity_residual(scenario, &opt.nu, &tax_m)?,
        tax_paper: tax_p,
        tax_marginal: tax_m,
        sc_equilibrium_grid: social_cost(scenario, &eq.nu)?,
        sc_optimum_grid: social_cost(scenario, &opt.nu)?,
        equilibrium_converged: eq.converged,
        optimum_converged: opt.converged,
        warning,
        equilibrium: eq.nu,
        optimum: opt.nu,
    })
}
