//! Release criteria, one test and one printed line each.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::time::Instant;

use cnot_core::dynamics::{jko_flow, quantile_distance, two_bumps, JkoParams};
use cnot_core::energy::{CongestionSpec, EnergyModel, InteractionKernel, PotentialSpec};
use cnot_core::measures::{DiscreteDensity, Grid, Interval};
use cnot_core::solver::{
    best_response_iterate, minimize_quantile, objective_eval, objective_gradient, Scenario, SolverParams,
};
use cnot_core::transport::{solve_lp, solve_lp_with_costs, w2_squared_1d, Atoms, CostSpec};
use cnot_core::verify::{displacement_convexity_probe, monge_ampere_residual_1d, transport_derivative_check};
use cnot_core::welfare::cost_of_anarchy;
use common::{criterion, random_density, rng, shipped, smooth_density, solved, w2, SHIPPED};
use itertools::Itertools;
use rand::Rng;

/// Cost of anarchy of the fig2_style fixture at release 0.1.0.
const FIG2_COA: f64 = 1.1806968505067144;
/// Objective value of the fig1 fixture at release 0.1.0.
const FIG1_J: f64 = 0.2046884949291325;

const CONVEX: [&str; 4] = [
    "convex_entropy_kernel",
    "convex_entropy_potential",
    "power_convex",
    "fig3_style",
];

fn gaussian(grid: Grid, mean: f64, sd: f64) -> DiscreteDensity {
    DiscreteDensity::from_fn(grid, |y| (-(y - mean) * (y - mean) / (2.0 * sd * sd)).exp()).unwrap()
}

#[test]
fn c01_ot_oracle_agreement() {
    let start = Instant::now();
    let mut r = rng(1);
    let grid = Grid::unit(16).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let mu = random_density(&mut r, grid, 0.1, 2.0);
        let nu = random_density(&mut r, grid, 0.1, 2.0);
        let closed = w2_squared_1d(&mu, &nu, 2048).unwrap();
        let (a, b) = (Atoms::from_density(&mu), Atoms::from_density(&nu));
        let costs: Vec<Vec<f64>> = a
            .locations()
            .iter()
            .map(|x| b.locations().iter().map(|y| (x - y) * (x - y)).collect())
            .collect();
        let lp = solve_lp_with_costs(a.weights(), b.weights(), &costs).unwrap().value;
        worst = worst.max((closed - lp).abs() / (2e-3 * (1.0 + lp)));
    }
    let secs = start.elapsed().as_secs_f64();
    criterion(
        1,
        "quantile W2 vs transport LP",
        worst <= 1.0 && secs < 5.0,
        format!("worst error / tolerance = {worst:.3}, {secs:.2} s (< 5 s)"),
    );
}

fn brute_force_assignment(costs: &[Vec<f64>]) -> f64 {
    let k = costs.len();
    (0..k)
        .permutations(k)
        .map(|p| p.iter().enumerate().map(|(i, &j)| costs[i][j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / k as f64
}

#[test]
fn c02_zero_duality_gap() {
    let mut r = rng(2);
    let mut worst_gap: f64 = 0.0;
    for case in 0..100 {
        let n = r.gen_range(1..=64);
        let m = r.gen_range(1..=64);
        let a = random_atoms(&mut r, n);
        let b = random_atoms(&mut r, m);
        let sol = if case % 2 == 0 {
            solve_lp(&a, &b, &CostSpec::quadratic()).unwrap()
        } else {
            let costs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| r.gen_range(0.0..1.0)).collect())
                .collect();
            solve_lp_with_costs(a.weights(), b.weights(), &costs).unwrap()
        };
        worst_gap = worst_gap.max((sol.value - sol.dual_value).abs());
    }
    let mut worst_assign: f64 = 0.0;
    let mut instances = 0;
    for k in 1..=6 {
        for _ in 0..20 {
            let costs: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| r.gen_range(0.0..1.0)).collect())
                .collect();
            let w = vec![1.0 / k as f64; k];
            let lp = solve_lp_with_costs(&w, &w, &costs).unwrap().value;
            worst_assign = worst_assign.max((lp - brute_force_assignment(&costs)).abs());
            instances += 1;
        }
    }
    criterion(
        2,
        "transport LP duality and assignment oracle",
        worst_gap <= 1e-9 && worst_assign <= 1e-9,
        format!("max |primal - dual| = {worst_gap:.2e} (<= 1e-9), max |LP - brute force| = {worst_assign:.2e} over {instances} assignments"),
    );
}

fn random_atoms(r: &mut rand_chacha::ChaCha8Rng, k: usize) -> Atoms {
    let locations = (0..k).map(|_| r.gen_range(0.0..1.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| r.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Atoms::new(locations, raw.iter().map(|w| w / total).collect()).unwrap()
}

fn family(index: usize, mu_seed: u64) -> Scenario {
    let mut r = rng(mu_seed);
    let unit = Grid::unit(32).unwrap();
    let shifted = Grid::new(Interval::new(5.0, 6.0).unwrap(), 32).unwrap();
    let (grid, cost, model) = match index {
        0 => (
            unit,
            CostSpec::quadratic(),
            EnergyModel::local(CongestionSpec::entropy(), unit).unwrap(),
        ),
        1 => (
            unit,
            CostSpec::quadratic(),
            EnergyModel::new(
                CongestionSpec::entropy(),
                Some(InteractionKernel::QuadraticDistance { kappa: 0.5 }),
                Some(PotentialSpec::poly(vec![0.0, 0.0, 1.0], 0.3, true).unwrap()),
                unit,
            )
            .unwrap(),
        ),
        2 => (
            unit,
            CostSpec::quadratic(),
            EnergyModel::new(
                CongestionSpec::power(2.0, 1.0).unwrap(),
                Some(InteractionKernel::CubicDistance { kappa: 1.0 }),
                None,
                unit,
            )
            .unwrap(),
        ),
        3 => (
            shifted,
            CostSpec::quadratic(),
            EnergyModel::new(
                CongestionSpec::entropy(),
                Some(InteractionKernel::Product { kappa: 0.7 }),
                Some(PotentialSpec::poly(vec![0.0, 0.0, 0.0, 1.0], 5.0, true).unwrap()),
                shifted,
            )
            .unwrap(),
        ),
        _ => (
            unit,
            CostSpec::power(3.0).unwrap(),
            EnergyModel::new(
                CongestionSpec::power(3.0, 0.5).unwrap(),
                Some(InteractionKernel::QuadraticDistance { kappa: 0.3 }),
                None,
                unit,
            )
            .unwrap(),
        ),
    };
    let mu = smooth_density(&mut r, grid);
    Scenario::new(format!("family{index}"), mu, cost, model, 33).unwrap()
}

#[test]
fn c03_gradient_matches_finite_differences() {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for fam in 0..5 {
        let sc = family(fam, 30 + fam as u64);
        let iv = sc.interval();
        for _ in 0..20 {
            let m = sc.quantile_m();
            let incr: Vec<f64> = (0..m).map(|_| r.gen_range(0.5..1.5)).collect();
            let total: f64 = incr.iter().sum();
            let (lo, span) = (iv.lo() + 0.05 * iv.length(), 0.9 * iv.length());
            let mut acc = 0.0;
            let values: Vec<f64> = incr
                .iter()
                .map(|d| {
                    let v = lo + span * acc / (total - incr[m - 1]);
                    acc += d;
                    v
                })
                .collect();
            let g = sc.quantile(values.clone()).unwrap();
            let grad = objective_gradient(&sc, &g).unwrap();
            let h = 1e-6 * iv.length();
            let mut err: f64 = 0.0;
            let scale = grad.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            for j in 0..m {
                let eval = |d: f64| {
                    let mut v = values.clone();
                    v[j] += d;
                    objective_eval(&sc, &sc.quantile(v).unwrap()).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                err = err.max((fd - grad[j]).abs());
            }
            worst = worst.max(err / scale);
        }
    }
    criterion(
        3,
        "objective gradient vs central differences",
        worst <= 1e-6,
        format!("max relative error {worst:.2e} (<= 1e-6) over 5 families x 20 points"),
    );
}

#[test]
fn c04_uniform_fixed_point() {
    let loaded = shipped("uniform");
    let sc = &loaded.scenario;
    assert_eq!((sc.grid().n(), sc.quantile_m()), (256, 256));
    let res = minimize_quantile(sc, &loaded.params, None).unwrap();
    let br = best_response_iterate(sc, &smooth_density(&mut rng(4), *sc.grid()), 0.5, 100).unwrap();
    let sup = |nu: &DiscreteDensity| nu.values().iter().fold(0.0_f64, |a, v| a.max((v - 1.0).abs()));
    let (e_solver, e_br) = (sup(&res.nu), sup(&br));
    criterion(
        4,
        "uniform fixed point",
        e_solver <= 1e-4 && e_br <= 1e-4 && res.residual_sup <= 1e-6 && res.residual_eq <= 1e-6,
        format!(
            "sup error solver {e_solver:.2e}, best response {e_br:.2e} (<= 1e-4); residuals {:.2e}/{:.2e} (<= 1e-6)",
            res.residual_sup, res.residual_eq
        ),
    );
}

#[test]
fn c05_solver_output_is_an_equilibrium() {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    let mut all_converged = true;
    for name in SHIPPED {
        let run = solved(name);
        let res = &run.1;
        all_converged &= res.converged;
        worst = worst.max(res.residual_sup).max(res.residual_eq);
        lines.push(format!("{name} {:.1e}/{:.1e}", res.residual_sup, res.residual_eq));
    }
    criterion(
        5,
        "equilibrium residuals on shipped scenarios",
        worst <= 1e-3 && all_converged,
        format!("worst {worst:.2e} (<= 1e-3): {}", lines.join(", ")),
    );
}

#[test]
fn c06_variational_matches_best_response() {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for name in ["convex_entropy_kernel", "convex_entropy_potential", "power_convex"] {
        let run = solved(name);
        let sc = &run.0.scenario;
        let br = best_response_iterate(sc, &DiscreteDensity::uniform(*sc.grid()), 0.5, 200).unwrap();
        let d = w2(&br, &run.1.nu);
        worst = worst.max(d);
        lines.push(format!("{name} {d:.1e}"));
    }
    criterion(
        6,
        "variational vs damped best response",
        worst <= 1e-3,
        format!("max W2 {worst:.2e} (<= 1e-3): {}", lines.join(", ")),
    );
}

#[test]
fn c07_initialization_independence() {
    let mut worst: f64 = 0.0;
    for name in CONVEX {
        let run = solved(name);
        let (loaded, base) = (&run.0, &run.1);
        let sc = &loaded.scenario;
        let starts = [
            sc.quantile_of(&DiscreteDensity::uniform(*sc.grid())).unwrap(),
            sc.quantile_of(&two_bumps(*sc.grid()).unwrap()).unwrap(),
        ];
        for g0 in &starts {
            let res = minimize_quantile(sc, &loaded.params, Some(g0)).unwrap();
            assert!(res.converged, "{name}");
            worst = worst.max(quantile_distance(&res.g, &base.g));
        }
    }
    criterion(
        7,
        "uniqueness across initializations",
        worst <= 1e-6,
        format!("max W2 between source, uniform and two-bump starts {worst:.2e} (<= 1e-6)"),
    );
}

#[test]
fn c08_jko_lyapunov_and_consistency() {
    let mut max_rise = f64::NEG_INFINITY;
    let mut worst_direct: f64 = 0.0;
    let mut worst_starts: f64 = 0.0;
    for name in ["fig3_style", "convex_entropy_kernel"] {
        let loaded = shipped(name);
        let sc = &loaded.scenario;
        let mut params = JkoParams::new(0.5, 20);
        params.inner = loaded.params;
        let mut terminals = Vec::new();
        for nu0 in [DiscreteDensity::uniform(*sc.grid()), two_bumps(*sc.grid()).unwrap()] {
            let tr = jko_flow(sc, &nu0, &params).unwrap();
            let j = tr.j_values();
            for w in j.windows(2) {
                max_rise = max_rise.max(w[1] - w[0]);
            }
            worst_direct = worst_direct.max(tr.direct.unwrap().w2_to_direct);
            terminals.push(tr.terminal().g.clone());
        }
        worst_starts = worst_starts.max(quantile_distance(&terminals[0], &terminals[1]));
    }
    criterion(
        8,
        "minimizing movement: Lyapunov and limit",
        max_rise <= 1e-10 && worst_direct <= 1e-3 && worst_starts <= 1e-3,
        format!(
            "max J increase {max_rise:.1e} (<= 1e-10), terminal vs direct W2 {worst_direct:.1e}, uniform vs two-bump W2 {worst_starts:.1e} (<= 1e-3)"
        ),
    );
}

#[test]
fn c09_displacement_convexity() {
    let t: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let mut worst: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    let mut scenarios = 0;
    let mut r = rng(9);
    for name in SHIPPED {
        let loaded = shipped(name);
        let sc = &loaded.scenario;
        if !sc.model().displacement_convex() {
            continue;
        }
        scenarios += 1;
        for _ in 0..20 {
            let a = smooth_density(&mut r, *sc.grid());
            let b = smooth_density(&mut r, *sc.grid());
            let rep = displacement_convexity_probe(sc, &a, &b, &t).unwrap();
            worst = worst.max(rep.max_violation);
            min_margin = min_margin.min(rep.midpoint_margin);
        }
    }
    criterion(
        9,
        "displacement convexity along generalized geodesics",
        scenarios >= 5 && worst <= 1e-8 && min_margin > 0.0,
        format!("{scenarios} scenarios x 20 pairs: max violation {worst:.1e} (<= 1e-8), min midpoint margin {min_margin:.1e} (> 0)"),
    );
}

fn kernel_scenario(n: usize) -> Scenario {
    let grid = Grid::unit(n).unwrap();
    let model = EnergyModel::new(
        CongestionSpec::entropy(),
        Some(InteractionKernel::QuadraticDistance { kappa: 0.5 }),
        None,
        grid,
    )
    .unwrap();
    Scenario::new("kernel", gaussian(grid, 0.4, 0.3), CostSpec::quadratic(), model, n + 1).unwrap()
}

#[test]
fn c10_monge_ampere_residual() {
    let uniform = shipped("uniform");
    let flat = DiscreteDensity::uniform(*uniform.scenario.grid());
    let exact = monge_ampere_residual_1d(&uniform.scenario, &flat).unwrap();
    let params = SolverParams::default();
    let mut seq = Vec::new();
    let mut perturbed = f64::INFINITY;
    for n in [64, 128, 256] {
        let sc = kernel_scenario(n);
        let nu = minimize_quantile(&sc, &params, None).unwrap().nu;
        seq.push(monge_ampere_residual_1d(&sc, &nu).unwrap());
        let bumped = DiscreteDensity::from_fn(*sc.grid(), |y| {
            let i = sc.grid().cell_of(y);
            nu.values()[i] * (1.0 + 0.3 * (6.0 * std::f64::consts::PI * y).sin())
        })
        .unwrap();
        perturbed = perturbed.min(monge_ampere_residual_1d(&sc, &bumped).unwrap());
    }
    let decreasing = seq.windows(2).all(|w| w[1] < w[0]);
    criterion(
        10,
        "Monge-Ampere residual",
        exact <= 1e-3 && seq[2] <= 1e-3 && decreasing && perturbed >= 0.1,
        format!(
            "uniform {exact:.1e}; equilibrium n=64,128,256: {:.1e}, {:.1e}, {:.1e} (<= 1e-3, decreasing); perturbed >= {perturbed:.2}",
            seq[0], seq[1], seq[2]
        ),
    );
}

#[test]
fn c11_transport_derivative() {
    let mut r = rng(11);
    let grid = Grid::unit(32).unwrap();
    let mut ok = 0;
    let mut ratios = Vec::new();
    for _ in 0..10 {
        let mu = smooth_density(&mut r, grid);
        let nu = smooth_density(&mut r, grid);
        let rho = smooth_density(&mut r, grid);
        let rep = transport_derivative_check(&mu, &nu, &rho, &CostSpec::quadratic(), &[1e-2, 1e-3]).unwrap();
        if rep.errors[1] < rep.errors[0] {
            ok += 1;
        }
        ratios.push(rep.errors[1] / rep.errors[0]);
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    criterion(
        11,
        "first variation of the transport cost",
        ok == 10,
        format!("{ok}/10 triples with smaller error at eps = 1e-3; worst error ratio {worst:.3}"),
    );
}

#[test]
fn c12_welfare() {
    let mut min_coa = f64::INFINITY;
    let mut worst_tax: f64 = 0.0;
    let mut trivial = f64::NAN;
    let mut fig2 = f64::NAN;
    for name in SHIPPED {
        if name == "fig1" {
            // same parameters as fig2_style
            continue;
        }
        let loaded = shipped(name);
        let rep = cost_of_anarchy(&loaded.scenario, &loaded.params).unwrap();
        min_coa = min_coa.min(rep.cost_of_anarchy);
        if loaded.scenario.model().displacement_convex() {
            worst_tax = worst_tax.max(rep.stationarity_residual_marginal);
        }
        match name {
            "uniform" => trivial = rep.cost_of_anarchy,
            "fig2_style" => fig2 = rep.cost_of_anarchy,
            _ => {}
        }
    }
    let drift = (fig2 - FIG2_COA).abs();
    criterion(
        12,
        "welfare",
        min_coa >= 1.0 - 1e-9 && (trivial - 1.0).abs() <= 1e-9 && worst_tax <= 1e-3 && drift <= 1e-6,
        format!(
            "min CoA {min_coa:.6} (>= 1), trivial CoA {trivial}, marginal-tax residual {worst_tax:.1e} (<= 1e-3), fig2_style CoA {fig2:.7} (drift {drift:.1e} <= 1e-6)"
        ),
    );
}

#[test]
fn c13_fig1_fixture() {
    let run = solved("fig1");
    let (loaded, res) = (&run.0, &run.1);
    let sc = &loaded.scenario;
    match &sc.model().congestion {
        CongestionSpec::Power { alpha, a } => assert_eq!((*alpha, *a), (8.0, 1.0)),
        other => panic!("unexpected congestion {other:?}"),
    }
    let v = res.nu.values();
    let n = v.len();
    let first = v.iter().position(|x| *x > 0.0).unwrap();
    let last = v.iter().rposition(|x| *x > 0.0).unwrap();
    let peak = v.iter().position_max_by(|a, b| a.total_cmp(b)).unwrap();
    let tol = 1e-12 * res.nu.max();
    let unimodal =
        v[..=peak].windows(2).all(|w| w[1] >= w[0] - tol) && v[peak..].windows(2).all(|w| w[1] <= w[0] + tol);
    let interior = first > n / 20 && last < n - 1 - n / 20;
    let drift = (res.j_value - FIG1_J).abs();
    criterion(
        13,
        "fig1 fixture",
        res.converged
            && res.residual_sup <= 1e-3
            && res.residual_eq <= 1e-3
            && unimodal
            && interior
            && drift <= 1e-6,
        format!(
            "residuals {:.1e}/{:.1e} (<= 1e-3), unimodal {unimodal}, support cells {first}..{last} of {n}, J {} (drift {drift:.1e})",
            res.residual_sup, res.residual_eq, res.j_value
        ),
    );
}
