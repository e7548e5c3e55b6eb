mod common;

use cnot_core::energy::{CongestionSpec, EntropyConvention, InteractionKernel};
use cnot_core::measures::{DiscreteDensity, Grid};
use cnot_core::solver::{j_density, minimize_quantile, SolverParams};
use cnot_core::verify::equilibrium_residual;
use cnot_core::welfare::{
    cost_of_anarchy, minimize_social_cost, social_cost, tax_marginal, tax_paper, taxed_stationarity_residual,
};
use common::{random_density, rng, shipped, smooth_density, unit_scenario, w2};

fn uniform_entropy(
    n: usize,
    convention: EntropyConvention,
    kernel: Option<InteractionKernel>,
) -> cnot_core::solver::Scenario {
    let grid = Grid::unit(n).unwrap();
    unit_scenario(
        DiscreteDensity::uniform(grid),
        CongestionSpec::entropy_with(convention),
        kernel,
        None,
        n + 1,
    )
}

#[test]
fn social_cost_of_the_uniform_fixed_point_is_zero() {
    let sc = uniform_entropy(64, EntropyConvention::SLogSMinusS, None);
    let nu = DiscreteDensity::uniform(*sc.grid());
    assert!(social_cost(&sc, &nu).unwrap().abs() <= 1e-14);
}

#[test]
fn full_interaction_of_the_uniform_density_converges() {
    // E|Y - Z|^2 = 1/6 for independent uniforms; the midpoint rule is off by
    // Delta^2 / 6
    let mut errors = Vec::new();
    for n in [32, 64, 128] {
        let sc = uniform_entropy(
            n,
            EntropyConvention::SLogSMinusS,
            Some(InteractionKernel::QuadraticDistance { kappa: 1.0 }),
        );
        let nu = DiscreteDensity::uniform(*sc.grid());
        let err = (social_cost(&sc, &nu).unwrap() - 1.0 / 6.0).abs();
        let dx = 1.0 / n as f64;
        assert!((err - dx * dx / 6.0).abs() <= 1e-12, "n {n}: {err}");
        errors.push(err);
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0] / 3.0));
}

#[test]
fn entropy_taxes_follow_the_convention() {
    let minus = uniform_entropy(32, EntropyConvention::SLogSMinusS, None);
    let plain = uniform_entropy(32, EntropyConvention::SLogS, None);
    let nu = DiscreteDensity::uniform(*minus.grid());
    assert!(tax_paper(&minus, &nu).unwrap().iter().all(|t| (t - 1.0).abs() <= 1e-14));
    assert!(tax_paper(&plain, &nu).unwrap().iter().all(|t| t.abs() <= 1e-14));
    for sc in [&minus, &plain] {
        assert!(tax_marginal(sc, &nu).unwrap().iter().all(|t| (t - 1.0).abs() <= 1e-14));
    }
}

#[test]
fn entropy_marginal_tax_adds_the_interaction_field() {
    let kappa = 0.7;
    let sc = uniform_entropy(
        48,
        EntropyConvention::SLogSMinusS,
        Some(InteractionKernel::Product { kappa }),
    );
    let nu = random_density(&mut rng(3), *sc.grid(), 0.2, 2.0);
    let dx = sc.grid().spacing();
    let nodes = sc.grid().nodes();
    let mean: f64 = nodes.iter().zip(nu.values()).map(|(z, v)| z * v).sum::<f64>() * dx;
    let tax = tax_marginal(&sc, &nu).unwrap();
    for (y, t) in nodes.iter().zip(&tax) {
        let want = 1.0 + kappa * y * mean;
        assert!((t - want).abs() <= 1e-12, "{t} vs {want}");
    }
}

#[test]
fn shared_minimizer_gives_no_anarchy() {
    let sc = uniform_entropy(64, EntropyConvention::SLogSMinusS, None);
    let params = SolverParams::default();
    let opt = minimize_social_cost(&sc, &params).unwrap();
    let uniform = DiscreteDensity::uniform(*sc.grid());
    assert!(opt.nu.sup_distance(&uniform) <= 1e-9);
    let report = cost_of_anarchy(&sc, &params).unwrap();
    assert_eq!(report.cost_of_anarchy, 1.0);
    assert!(report.warning.is_none());
}

#[test]
fn optimum_beats_random_densities_and_the_equilibrium() {
    let loaded = shipped("power_convex");
    let sc = &loaded.scenario;
    let opt = minimize_social_cost(sc, &loaded.params).unwrap();
    assert!(opt.converged);
    let best = social_cost(sc, &opt.nu).unwrap();
    let mut r = rng(20);
    for i in 0..20 {
        let nu = if i % 2 == 0 {
            smooth_density(&mut r, *sc.grid())
        } else {
            random_density(&mut r, *sc.grid(), 0.1, 3.0)
        };
        let other = social_cost(sc, &nu).unwrap();
        assert!(best <= other + 1e-9, "sample {i}: {best} > {other}");
    }
    let eq = minimize_quantile(sc, &loaded.params, None).unwrap();
    assert!(best <= social_cost(sc, &eq.nu).unwrap() + 1e-9);
}

#[test]
fn marginal_tax_decentralizes_the_optimum() {
    for name in [
        "convex_entropy_kernel",
        "convex_entropy_potential",
        "power_convex",
        "fig3_style",
    ] {
        let loaded = shipped(name);
        let sc = &loaded.scenario;
        let opt = minimize_social_cost(sc, &loaded.params).unwrap();
        let tax = tax_marginal(sc, &opt.nu).unwrap();
        let r = taxed_stationarity_residual(sc, &opt.nu, &tax).unwrap();
        assert!(r <= 1e-3, "{name}: {r}");
        assert_eq!(r, opt.residual_eq);
    }
}

#[test]
fn zero_tax_restates_the_equilibrium_condition() {
    let loaded = shipped("convex_entropy_kernel");
    let sc = &loaded.scenario;
    let eq = minimize_quantile(sc, &loaded.params, None).unwrap();
    let zero = vec![0.0; sc.grid().n()];
    let r = taxed_stationarity_residual(sc, &eq.nu, &zero).unwrap();
    assert!(r <= 1e-3);
    assert_eq!(r, equilibrium_residual(sc, &eq.nu).unwrap().residual_eq);
}

#[test]
fn paper_tax_misses_stationarity_under_power_congestion() {
    let loaded = shipped("power_convex");
    let report = cost_of_anarchy(&loaded.scenario, &loaded.params).unwrap();
    assert!(report.stationarity_residual_marginal <= 1e-3);
    assert!(
        report.stationarity_residual_paper > 10.0 * report.stationarity_residual_marginal,
        "{} vs {}",
        report.stationarity_residual_paper,
        report.stationarity_residual_marginal
    );
}

#[test]
fn social_cost_dominates_the_objective_for_power_congestion() {
    let loaded = shipped("power_convex");
    let sc = &loaded.scenario;
    let mut r = rng(5);
    for _ in 0..10 {
        let nu = smooth_density(&mut r, *sc.grid());
        assert!(social_cost(sc, &nu).unwrap() >= j_density(sc, &nu).unwrap());
    }
}

#[test]
fn report_is_consistent() {
    let loaded = shipped("fig2_style");
    let report = cost_of_anarchy(&loaded.scenario, &loaded.params).unwrap();
    assert!(report.cost_of_anarchy >= 1.0 - 1e-9);
    assert!(report.sc_optimum <= report.sc_equilibrium + 1e-9);
    assert!(
        report.sc_optimum < report.sc_equilibrium,
        "optimum should be strictly better"
    );
    assert!(w2(&report.equilibrium, &report.optimum) > 1e-3);
    let csv = report.taxes_csv();
    assert!(csv.starts_with("node,tax_paper,tax_marginal\n"));
    assert_eq!(csv.lines().count(), loaded.scenario.grid().n() + 1);
    let json = serde_json::to_value(&report).unwrap();
    for key in [
        "sc_equilibrium",
        "sc_optimum",
        "cost_of_anarchy",
        "tax_paper",
        "tax_marginal",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
}
