//! Equilibria as minimizers of transport cost plus energy.
//!
//! The variable is the quantile function `G` of the action distribution, so
//! the only constraint is monotonicity (plus the interval box). A projected
//! gradient method with Barzilai-Borwein steps and Armijo backtracking does
//! the minimization. [`best_response_iterate`] is an independent fixed-point
//! solver built on the inverted optimality condition.

mod best_response;
pub(crate) mod objective;
mod projection;

use serde::Serialize;

use crate::energy::{energy_eval, EnergyModel};
use crate::error::{Error, Result};
use crate::measures::{
    density_to_quantile_with, quantile_to_density, DiscreteDensity, Grid, Interval, NodeLayout, QuantileFn, SupportMode,
};
use crate::transport::{ensure_positive, wasserstein_cost_1d, CostSpec};

pub use best_response::{best_response_iterate, best_response_map, BestResponse};
pub use objective::Terms;
use objective::{Integrand, QuantileProblem};
pub(crate) use projection::project_weighted;
pub use projection::{isotonic_regression, project_monotone};

/// A fully specified game: type distribution, cost, energy and the
/// discretization used to solve it.
#[derive(Debug, Clone)]
pub struct Scenario {
    name: String,
    mu: DiscreteDensity,
    cost: CostSpec,
    model: EnergyModel,
    quantile_m: usize,
    support_mode: SupportMode,
    seed: Option<u64>,
    source_quantile: Vec<f64>,
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        mu: DiscreteDensity,
        cost: CostSpec,
        model: EnergyModel,
        quantile_m: usize,
    ) -> Result<Self> {
        ensure_positive(&mu)?;
        if *mu.grid() != model.grid {
            return Err(Error::invalid("source density and energy model use different grids"));
        }
        if quantile_m < 3 {
            return Err(Error::invalid(format!(
                "quantile resolution must be >= 3, got {quantile_m}"
            )));
        }
        cost.check_strictly_convex(mu.grid().interval().length())?;
        let source_quantile = density_to_quantile_with(&mu, quantile_m, NodeLayout::Endpoint)?
            .values()
            .to_vec();
        Ok(Self {
            name: name.into(),
            mu,
            cost,
            model,
            quantile_m,
            support_mode: SupportMode::default(),
            seed: None,
            source_quantile,
        })
    }

    pub fn with_support_mode(mut self, mode: SupportMode) -> Self {
        self.support_mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_quantile_m(self, m: usize) -> Result<Self> {
        let out = Scenario::new(self.name, self.mu, self.cost, self.model, m)?;
        Ok(out.with_support_mode(self.support_mode).with_seed(self.seed))
    }

    pub fn with_model(self, model: EnergyModel) -> Result<Self> {
        let out = Scenario::new(self.name, self.mu, self.cost, model, self.quantile_m)?;
        Ok(out.with_support_mode(self.support_mode).with_seed(self.seed))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mu(&self) -> &DiscreteDensity {
        &self.mu
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn model(&self) -> &EnergyModel {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        self.mu.grid()
    }

    pub fn interval(&self) -> Interval {
        self.mu.grid().interval()
    }

    pub fn quantile_m(&self) -> usize {
        self.quantile_m
    }

    pub fn support_mode(&self) -> SupportMode {
        self.support_mode
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Quantile of the source density on the solver's probability nodes.
    pub fn source_quantile(&self) -> QuantileFn {
        QuantileFn::from_parts_unchecked(
            self.interval(),
            NodeLayout::Endpoint,
            self.source_quantile.clone(),
            self.support_mode,
        )
    }

    /// Endpoint-layout quantile with this scenario's support mode.
    pub fn quantile(&self, values: Vec<f64>) -> Result<QuantileFn> {
        QuantileFn::new(self.interval(), NodeLayout::Endpoint, values, self.support_mode)
    }

    /// Quantile of `nu` on the solver's probability nodes.
    pub fn quantile_of(&self, nu: &DiscreteDensity) -> Result<QuantileFn> {
        let g = density_to_quantile_with(nu, self.quantile_m, NodeLayout::Endpoint)?;
        let values = project_weighted(
            g.values(),
            &vec![1.0; self.quantile_m],
            self.interval(),
            self.support_mode,
        );
        Ok(QuantileFn::from_parts_unchecked(
            self.interval(),
            NodeLayout::Endpoint,
            values,
            self.support_mode,
        ))
    }

    pub fn metadata(&self) -> ResultMetadata {
        ResultMetadata {
            scenario: self.name.clone(),
            congestion: self.model.congestion.label(),
            convention: self.model.congestion.convention_label().to_string(),
            support_mode: self.support_mode,
            cost: self.cost.label(),
            grid_n: self.grid().n(),
            quantile_m: self.quantile_m,
            seed: self.seed,
        }
    }

    /// Source quantile at resolution `m` (cached for the scenario's own `m`).
    pub(crate) fn source_values(&self, m: usize) -> Result<std::borrow::Cow<'_, [f64]>> {
        if m == self.quantile_m {
            return Ok(std::borrow::Cow::Borrowed(&self.source_quantile));
        }
        let h = density_to_quantile_with(&self.mu, m, NodeLayout::Endpoint)?;
        Ok(std::borrow::Cow::Owned(h.values().to_vec()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverParams {
    pub max_iters: usize,
    /// Stop once the sup norm of the projected gradient step falls below it.
    pub grad_tol: f64,
    pub step0: f64,
    /// Backtracking factor.
    pub beta: f64,
    /// Armijo sufficient-decrease constant.
    pub sigma: f64,
    /// Project onto monotone quantiles every step. When off, steps that
    /// break monotonicity are rejected by the line search instead.
    pub monotone_projection: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            grad_tol: 1e-9,
            step0: 1e-2,
            beta: 0.5,
            sigma: 1e-4,
            monotone_projection: true,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.grad_tol > 0.0) || !(self.step0 > 0.0) {
            return Err(Error::invalid("solver max_iters, grad_tol and step0 must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) || !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::invalid("solver beta and sigma must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Conventions and discretization echoed into every result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultMetadata {
    pub scenario: String,
    pub congestion: String,
    pub convention: String,
    pub support_mode: SupportMode,
    pub cost: String,
    pub grid_n: usize,
    pub quantile_m: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub nu: DiscreteDensity,
    pub g: QuantileFn,
    /// Objective value at `g`.
    pub j_value: f64,
    /// Level `M` of the optimality condition.
    pub multiplier: f64,
    pub residual_sup: f64,
    pub residual_eq: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup norm of the final projected gradient step.
    pub grad_norm: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
    pub metadata: ResultMetadata,
}

fn check_quantile(scenario: &Scenario, g: &QuantileFn) -> Result<()> {
    if g.layout() != NodeLayout::Endpoint {
        return Err(Error::invalid(
            "the quantile objective needs endpoint probability nodes",
        ));
    }
    if g.interval() != scenario.interval() {
        return Err(Error::invalid("quantile lives on a different interval"));
    }
    if let Some(i) = g.values().windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::NonMonotone { index: i + 1 });
    }
    Ok(())
}

/// Variational objective at `G`; `+inf` when a gap closes under a barrier
/// congestion.
pub fn objective_eval(scenario: &Scenario, g: &QuantileFn) -> Result<f64> {
    Ok(objective_terms(scenario, g)?.total())
}

pub fn objective_terms(scenario: &Scenario, g: &QuantileFn) -> Result<Terms> {
    check_quantile(scenario, g)?;
    let h = scenario.source_values(g.m())?;
    Ok(QuantileProblem::new(scenario, Integrand::Equilibrium, &h).terms(g.values()))
}

/// Gradient of [`objective_eval`] with respect to the quantile values.
pub fn objective_gradient(scenario: &Scenario, g: &QuantileFn) -> Result<Vec<f64>> {
    check_quantile(scenario, g)?;
    let h = scenario.source_values(g.m())?;
    let problem = QuantileProblem::new(scenario, Integrand::Equilibrium, &h);
    let f = problem.value(g.values());
    if !f.is_finite() {
        return Err(Error::Precondition("objective is infinite at this quantile".into()));
    }
    Ok(problem.gradient(g.values()))
}

/// Variational objective evaluated on a grid density: transport cost at
/// quantile resolution `16 n` plus the energy.
pub fn j_density(scenario: &Scenario, nu: &DiscreteDensity) -> Result<f64> {
    let m = 16 * scenario.grid().n();
    Ok(wasserstein_cost_1d(scenario.mu(), nu, scenario.cost(), m)? + energy_eval(scenario.model(), nu)?)
}

pub(crate) struct Descent {
    pub g: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub history: Vec<f64>,
}

fn is_feasible(g: &[f64], interval: Interval, mode: SupportMode) -> bool {
    let ends_ok = match mode {
        SupportMode::Free => g[0] >= interval.lo() && g[g.len() - 1] <= interval.hi(),
        SupportMode::FixedEndpoints => g[0] == interval.lo() && g[g.len() - 1] == interval.hi(),
    };
    ends_ok && g.windows(2).all(|w| w[0] <= w[1])
}

/// Projected gradient in the trapezoid-weighted inner product: the step
/// direction is `grad / w`, the projection is the weighted isotonic fit.
pub(crate) fn descend(problem: &QuantileProblem, g0: Vec<f64>, params: &SolverParams) -> Result<Descent> {
    params.validate()?;
    let scenario = problem.scenario;
    let interval = scenario.interval();
    let mode = scenario.support_mode();
    let w = &problem.weights;
    let project = |x: &[f64]| project_weighted(x, w, interval, mode);

    let mut g = project(&g0);
    let mut f = problem.value(&g);
    if !f.is_finite() {
        return Err(Error::Precondition(
            "objective is infinite at the initial quantile (closed gap under a barrier congestion)".into(),
        ));
    }
    let mut grad = problem.gradient(&g);
    let mut dir: Vec<f64> = grad.iter().zip(w).map(|(a, b)| a / b).collect();
    let stationarity = |g: &[f64], dir: &[f64]| -> f64 {
        let trial: Vec<f64> = g.iter().zip(dir).map(|(a, d)| a - d).collect();
        project(&trial)
            .iter()
            .zip(g)
            .fold(0.0_f64, |acc, (p, q)| acc.max((p - q).abs()))
    };
    let mut pg = stationarity(&g, &dir);
    let mut history = vec![f];
    let mut step = params.step0;
    let mut iterations = 0;
    let mut converged = pg <= params.grad_tol;

    while !converged && iterations < params.max_iters {
        let mut t = step;
        let mut accepted = None;
        for _ in 0..200 {
            let trial: Vec<f64> = g.iter().zip(&dir).map(|(a, d)| a - t * d).collect();
            let c = if params.monotone_projection {
                project(&trial)
            } else {
                let mut c = trial;
                if mode == SupportMode::FixedEndpoints {
                    c[0] = interval.lo();
                    let last = c.len() - 1;
                    c[last] = interval.hi();
                }
                c
            };
            let fc = if is_feasible(&c, interval, mode) {
                problem.value(&c)
            } else {
                f64::INFINITY
            };
            let decrease: f64 = grad.iter().zip(c.iter().zip(&g)).map(|(d, (a, b))| d * (a - b)).sum();
            let armijo = fc <= f + params.sigma * decrease;
            let rounding = fc <= f + 1e-14 * (1.0 + f.abs()) && decrease <= 0.0;
            if fc.is_finite() && (armijo || rounding) {
                accepted = Some((c, fc));
                break;
            }
            t *= params.beta;
        }
        let Some((c, fc)) = accepted else {
            break;
        };
        iterations += 1;
        let new_grad = problem.gradient(&c);
        let new_dir: Vec<f64> = new_grad.iter().zip(w).map(|(a, b)| a / b).collect();
        // Barzilai-Borwein step in the weighted metric
        let mut ss = 0.0;
        let mut sy = 0.0;
        for j in 0..c.len() {
            let s = c[j] - g[j];
            let y = new_dir[j] - dir[j];
            ss += w[j] * s * s;
            sy += w[j] * s * y;
        }
        step = if sy > 0.0 && ss > 0.0 {
            (ss / sy).clamp(1e-14, 1e6)
        } else {
            (t / params.beta).min(1e6)
        };
        g = c;
        f = fc;
        grad = new_grad;
        dir = new_dir;
        history.push(f);
        pg = stationarity(&g, &dir);
        converged = pg <= params.grad_tol;
    }
    Ok(Descent {
        g,
        value: f,
        iterations,
        converged,
        grad_norm: pg,
        history,
    })
}

pub(crate) fn initial_values(scenario: &Scenario, g0: Option<&QuantileFn>) -> Result<Vec<f64>> {
    match g0 {
        None => Ok(scenario.source_quantile.clone()),
        Some(g) => {
            check_quantile(scenario, g)?;
            if g.m() != scenario.quantile_m() {
                return Err(Error::invalid(format!(
                    "initial quantile has {} nodes, scenario uses {}",
                    g.m(),
                    scenario.quantile_m()
                )));
            }
            Ok(g.values().to_vec())
        }
    }
}

pub(crate) fn quantile_fn(scenario: &Scenario, values: Vec<f64>) -> QuantileFn {
    QuantileFn::from_parts_unchecked(
        scenario.interval(),
        NodeLayout::Endpoint,
        values,
        scenario.support_mode(),
    )
}

/// Minimizes the variational objective from `g0` (default: the source
/// quantile) and certifies the result with the equilibrium residual.
pub fn minimize_quantile(
    scenario: &Scenario,
    params: &SolverParams,
    g0: Option<&QuantileFn>,
) -> Result<EquilibriumResult> {
    let start = initial_values(scenario, g0)?;
    let problem = QuantileProblem::new(scenario, Integrand::Equilibrium, &scenario.source_quantile);
    let run = descend(&problem, start, params)?;
    let g = quantile_fn(scenario, run.g);
    let nu = quantile_to_density(&g, scenario.grid())?;
    let report = crate::verify::equilibrium_residual(scenario, &nu)?;
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
