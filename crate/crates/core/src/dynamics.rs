//! Minimizing movement (JKO) scheme for the variational objective.
//!
//! Each step solves `argmin_G W2^2(nu_k, nu) / (2 tau) + J(G)` in quantile
//! coordinates, where the Wasserstein term is the weighted squared distance
//! between quantiles. No inner transport problem is needed in one dimension.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{quantile_to_density, DiscreteDensity, Grid, QuantileFn};
use crate::solver::objective::{Integrand, QuantileProblem};
use crate::solver::{descend, minimize_quantile, quantile_fn, Scenario, SolverParams};

/// Allowed increase of the objective between consecutive steps.
pub const LYAPUNOV_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JkoParams {
    pub tau: f64,
    pub steps: usize,
    pub inner: SolverParams,
    /// Also solve the static problem directly and compare the endpoint.
    pub compare_direct: bool,
}

impl JkoParams {
    pub fn new(tau: f64, steps: usize) -> Self {
        Self {
            tau,
            steps,
            inner: SolverParams::default(),
            compare_direct: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.tau)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("at least one step is required"));
        }
        self.inner.validate()
    }
}

/// Outcome of one proximal step.
#[derive(Debug, Clone)]
pub struct JkoStep {
    pub g: QuantileFn,
    pub nu: DiscreteDensity,
    /// Objective (without the proximal term) at the new point.
    pub j_value: f64,
    /// `W2(nu_k, nu_{k+1})`
    pub w2_step: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct TrajectoryPoint {
    pub k: usize,
    pub nu: DiscreteDensity,
    pub g: QuantileFn,
    pub j_value: f64,
    pub w2_step: f64,
}

/// Endpoint of the flow against the direct minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectComparison {
    pub j_direct: f64,
    pub w2_to_direct: f64,
    pub direct_converged: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub direct: Option<DirectComparison>,
}

impl Trajectory {
    pub fn terminal(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory holds the initial point")
    }

    pub fn j_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.j_value).collect()
    }

    /// CSV with columns `k,J,W2_step`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,J,W2_step\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.k, p.j_value, p.w2_step);
        }
        out
    }
}

/// `W2` between two quantiles on the solver's probability nodes.
pub fn quantile_distance(a: &QuantileFn, b: &QuantileFn) -> f64 {
    let w = crate::measures::NodeLayout::Endpoint.weights(a.m());
    a.values()
        .iter()
        .zip(b.values())
        .zip(&w)
        .map(|((x, y), wj)| wj * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn step_from(scenario: &Scenario, g_k: &QuantileFn, tau: f64, inner: &SolverParams, index: usize) -> Result<JkoStep> {
    let h = scenario.source_values(g_k.m())?;
    let problem = QuantileProblem::new(scenario, Integrand::Equilibrium, &h).with_prox(tau, g_k.values());
    let run = descend(&problem, g_k.values().to_vec(), inner)?;
    if !run.converged {
        return Err(Error::InnerSolveFailed {
            step: index,
            iterations: run.iterations,
            grad_norm: run.grad_norm,
        });
    }
    let plain = QuantileProblem::new(scenario, Integrand::Equilibrium, &h);
    let j_value = plain.value(&run.g);
    let g = quantile_fn(scenario, run.g);
    let nu = quantile_to_density(&g, scenario.grid())?;
    Ok(JkoStep {
        w2_step: quantile_distance(&g, g_k),
        g,
        nu,
        j_value,
        iterations: run.iterations,
    })
}

/// One proximal step from a quantile.
pub fn jko_step_quantile(scenario: &Scenario, g_k: &QuantileFn, tau: f64, inner: &SolverParams) -> Result<JkoStep> {
    if !(tau > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    if !scenario.cost().is_quadratic() {
        return Err(Error::Precondition(
            "the minimizing movement step uses the quadratic cost".into(),
        ));
    }
    step_from(scenario, g_k, tau, inner, 1)
}

/// One proximal step from a density.
pub fn jko_step(
    scenario: &Scenario,
    nu_k: &DiscreteDensity,
    tau: f64,
    inner: &SolverParams,
) -> Result<DiscreteDensity> {
    let g_k = scenario.quantile_of(nu_k)?;
    Ok(jko_step_quantile(scenario, &g_k, tau, inner)?.nu)
}

/// `steps` proximal steps from `nu0`. The quantile is carried between steps
/// so that no density round trip enters the iteration.
pub fn jko_flow(scenario: &Scenario, nu0: &DiscreteDensity, params: &JkoParams) -> Result<Trajectory> {
    params.validate()?;
    if !scenario.cost().is_quadratic() {
        return Err(Error::Precondition(
            "the minimizing movement step uses the quadratic cost".into(),
        ));
    }
    let g0 = scenario.quantile_of(nu0)?;
    let j0 = crate::solver::objective_eval(scenario, &g0)?;
    if !j0.is_finite() {
        return Err(Error::Precondition(
            "objective is infinite at the initial density (it needs positive mass everywhere)".into(),
        ));
    }
    let mut points = vec![TrajectoryPoint {
        k: 0,
        nu: quantile_to_density(&g0, scenario.grid())?,
        g: g0,
        j_value: j0,
        w2_step: 0.0,
    }];
    for k in 1..=params.steps {
        let prev = points.last().expect("non-empty");
        let step = step_from(scenario, &prev.g, params.tau, &params.inner, k)?;
        if step.j_value > prev.j_value + LYAPUNOV_SLACK {
            return Err(Error::Invariant(format!(
                "objective increased at step {k}: {} -> {}",
                prev.j_value, step.j_value
            )));
        }
        points.push(TrajectoryPoint {
            k,
            nu: step.nu,
            g: step.g,
            j_value: step.j_value,
            w2_step: step.w2_step,
        });
    }
    let direct = if params.compare_direct {
        let res = minimize_quantile(scenario, &params.inner, None)?;
        let last = points.last().expect("non-empty");
        Some(DirectComparison {
            j_direct: res.j_value,
            w2_to_direct: quantile_distance(&last.g, &res.g),
            direct_converged: res.converged,
        })
    } else {
        None
    };
    Ok(Trajectory { points, direct })
}

/// Two Gaussian bumps at a quarter and three quarters of the domain over a
/// small floor, so that barrier congestions stay finite.
pub fn two_bumps(grid: Grid) -> Result<DiscreteDensity> {
    let iv = grid.interval();
    let (a, b) = (iv.lo() + 0.25 * iv.length(), iv.lo() + 0.75 * iv.length());
    let width = 0.08 * iv.length();
    DiscreteDensity::from_fn(grid, |y| {
        let bump = |c: f64| (-(y - c) * (y - c) / (2.0 * width * width)).exp();
        0.05 + bump(a) + bump(b)
    })
}
