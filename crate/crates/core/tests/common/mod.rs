#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use cnot_core::config::{load_scenario, LoadedScenario};
use cnot_core::energy::{CongestionSpec, EnergyModel, InteractionKernel, PotentialSpec};
use cnot_core::measures::{DiscreteDensity, Grid};
use cnot_core::solver::{minimize_quantile, EquilibriumResult, Scenario};
use cnot_core::transport::{w2_squared_1d, CostSpec};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SHIPPED: [&str; 7] = [
    "uniform",
    "fig1",
    "fig2_style",
    "fig3_style",
    "convex_entropy_kernel",
    "convex_entropy_potential",
    "power_convex",
];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn shipped(name: &str) -> LoadedScenario {
    load_scenario(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub type Solved = Arc<(LoadedScenario, EquilibriumResult)>;

/// Solves each shipped scenario once per test binary.
pub fn solved(name: &str) -> Solved {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<OnceLock<Solved>>>>> = OnceLock::new();
    let slot = {
        let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
        map.entry(name.to_string()).or_default().clone()
    };
    slot.get_or_init(|| {
        let loaded = shipped(name);
        let res = minimize_quantile(&loaded.scenario, &loaded.params, None).unwrap();
        Arc::new((loaded, res))
    })
    .clone()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Positive density with values in `[lo, hi]` before normalization.
pub fn random_density(rng: &mut ChaCha8Rng, grid: Grid, lo: f64, hi: f64) -> DiscreteDensity {
    let values = (0..grid.n()).map(|_| rng.gen_range(lo..hi)).collect();
    DiscreteDensity::normalized(grid, values).unwrap()
}

/// Smooth positive density: a few random Fourier modes over a floor.
pub fn smooth_density(rng: &mut ChaCha8Rng, grid: Grid) -> DiscreteDensity {
    let iv = grid.interval();
    let modes: Vec<(f64, f64)> = (1..=3)
        .map(|k| {
            (
                rng.gen_range(-0.3..0.3) / k as f64,
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    DiscreteDensity::from_fn(grid, |y| {
        let t = (y - iv.lo()) / iv.length();
        1.0 + modes
            .iter()
            .enumerate()
            .map(|(k, (a, ph))| a * ((k + 1) as f64 * std::f64::consts::TAU * t + ph).sin())
            .sum::<f64>()
    })
    .unwrap()
}

pub fn w2(a: &DiscreteDensity, b: &DiscreteDensity) -> f64 {
    w2_squared_1d(a, b, 16 * a.grid().n()).unwrap().max(0.0).sqrt()
}

/// Prints one line per criterion and fails the test when it does not hold.
pub fn criterion(id: u32, title: &str, ok: bool, detail: String) {
    println!("[{}] {id:>2}. {title}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} ({title}) failed: {detail}");
}

/// Scenario on `[0, 1]` with source `mu` and `m` quantile nodes.
pub fn unit_scenario(
    mu: DiscreteDensity,
    congestion: CongestionSpec,
    kernel: Option<InteractionKernel>,
    potential: Option<PotentialSpec>,
    m: usize,
) -> Scenario {
    let model = EnergyModel::new(congestion, kernel, potential, *mu.grid()).unwrap();
    Scenario::new("test", mu, CostSpec::quadratic(), model, m).unwrap()
}
