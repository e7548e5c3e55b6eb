//! JSON scenario files.
//!
//! ```json
//! {
//!   "name": "fig1",
//!   "interval": { "lo": 7.5, "hi": 11.5 },
//!   "grid_n": 256,
//!   "quantile_m": 257,
//!   "mu": { "kind": "gaussian_truncated", "mean": 9.5, "sigma": 0.8 },
//!   "cost": { "kind": "quadratic" },
//!   "congestion": { "kind": "power", "alpha": 8, "a": 1 },
//!   "kernel": { "kind": "quadratic_distance", "kappa": 1e-4 },
//!   "potential": { "kind": "poly", "coeffs": [0, 0, 0, 0, 1], "center": 10 },
//!   "support_mode": "free",
//!   "solver": { "grad_tol": 1e-9 },
//!   "seed": null
//! }
//! ```
//!
//! Structural errors carry the JSON pointer of the offending field. Failed
//! convexity probes on declared-convex terms become warnings, not errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::{CongestionSpec, EnergyModel, EntropyConvention, InteractionKernel, PotentialSpec};
use crate::error::{Error, Result};
use crate::measures::{density_from_csv, DiscreteDensity, Grid, Interval, SupportMode};
use crate::solver::{Scenario, SolverParams};
use crate::transport::CostSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub interval: IntervalSpec,
    pub grid_n: usize,
    pub quantile_m: usize,
    pub mu: MuSpec,
    #[serde(default = "lebesgue")]
    pub reference_measure: String,
    #[serde(default)]
    pub cost: CostFileSpec,
    pub congestion: CongestionFileSpec,
    #[serde(default)]
    pub kernel: KernelFileSpec,
    #[serde(default)]
    pub potential: PotentialFileSpec,
    #[serde(default)]
    pub support_mode: SupportMode,
    #[serde(default)]
    pub solver: SolverFileSpec,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn lebesgue() -> String {
    "lebesgue".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MuSpec {
    Uniform {},
    /// Gaussian profile sampled at the grid nodes and renormalized.
    GaussianTruncated {
        mean: f64,
        sigma: f64,
    },
    /// CSV whose last column holds the density; the path is relative to
    /// the scenario file.
    Table {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostFileSpec {
    Quadratic {},
    /// `c(x, y) = |x - y|^p`
    ConvexDifference {
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CongestionFileSpec {
    Entropy {
        #[serde(default)]
        convention: EntropyConvention,
    },
    Power {
        alpha: f64,
        #[serde(default = "one")]
        a: f64,
    },
}

impl Default for CostFileSpec {
    fn default() -> Self {
        CostFileSpec::Quadratic {}
    }
}

impl Default for KernelFileSpec {
    fn default() -> Self {
        KernelFileSpec::None {}
    }
}

impl Default for PotentialFileSpec {
    fn default() -> Self {
        PotentialFileSpec::None {}
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFileSpec {
    None {},
    QuadraticDistance { kappa: f64 },
    CubicDistance { kappa: f64 },
    Product { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialFileSpec {
    None {},
    /// `sum_k coeffs[k] (y - center)^k`
    Poly {
        coeffs: Vec<f64>,
        #[serde(default)]
        center: f64,
        #[serde(default = "yes")]
        convex: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFileSpec {
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub step0: Option<f64>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub monotone_projection: Option<bool>,
}

impl SolverFileSpec {
    pub fn params(&self) -> SolverParams {
        let d = SolverParams::default();
        SolverParams {
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            step0: self.step0.unwrap_or(d.step0),
            beta: self.beta.unwrap_or(d.beta),
            sigma: self.sigma.unwrap_or(d.sigma),
            monotone_projection: self.monotone_projection.unwrap_or(d.monotone_projection),
        }
    }
}

/// A validated scenario with everything needed to reproduce a run.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub params: SolverParams,
    pub file: ScenarioFile,
    /// Hex SHA-256 of the scenario bytes.
    pub hash: String,
    pub warnings: Vec<String>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        use serde_path_to_error::Segment;
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push('/');
                out.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        "/".into()
    } else {
        out
    }
}

/// Parses scenario text. `base` resolves relative table paths.
pub fn parse_scenario(text: &str, base: &Path) -> Result<LoadedScenario> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let line = e.inner().line();
        let message = format!("{} (line {line})", e.inner());
        Error::scenario(pointer_of(e.path()), message)
    })?;
    de.end().map_err(|e| Error::scenario("/", e.to_string()))?;
    let hash = hex(&Sha256::digest(text.as_bytes()));
    build(file, base, hash)
}

/// Parses a JSON value (as produced by a parameter sweep).
pub fn scenario_from_value(value: &serde_json::Value, base: &Path) -> Result<LoadedScenario> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::scenario("/", e.to_string()))?;
    parse_scenario(&text, base)
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn positive(value: f64, pointer: &str) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::scenario(
            pointer,
            format!("must be positive and finite, got {value}"),
        ))
    }
}

fn finite(value: f64, pointer: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::scenario(pointer, format!("must be finite, got {value}")))
    }
}

fn at(pointer: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Scenario { .. } => e,
        other => Error::scenario(pointer, other.to_string()),
    }
}

fn build(file: ScenarioFile, base: &Path, hash: String) -> Result<LoadedScenario> {
    let mut warnings = Vec::new();
    if file.reference_measure != "lebesgue" {
        return Err(Error::scenario(
            "/reference_measure",
            format!("only \"lebesgue\" is supported, got \"{}\"", file.reference_measure),
        ));
    }
    finite(file.interval.lo, "/interval/lo")?;
    finite(file.interval.hi, "/interval/hi")?;
    let interval = Interval::new(file.interval.lo, file.interval.hi).map_err(at("/interval"))?;
    if file.grid_n < 2 {
        return Err(Error::scenario("/grid_n", "at least two cells are required"));
    }
    if file.quantile_m < 3 {
        return Err(Error::scenario(
            "/quantile_m",
            "at least three quantile nodes are required",
        ));
    }
    let grid = Grid::new(interval, file.grid_n).map_err(at("/grid_n"))?;

    let mu = match &file.mu {
        MuSpec::Uniform {} => DiscreteDensity::uniform(grid),
        MuSpec::GaussianTruncated { mean, sigma } => {
            finite(*mean, "/mu/mean")?;
            positive(*sigma, "/mu/sigma")?;
            let values = grid
                .nodes()
                .iter()
                .map(|y| (-(y - mean).powi(2) / (2.0 * sigma * sigma)).exp())
                .collect();
            DiscreteDensity::normalized(grid, values).map_err(at("/mu"))?
        }
        MuSpec::Table { path } => {
            let full = base.join(path);
            let text = std::fs::read_to_string(&full)
                .map_err(|e| Error::scenario("/mu/path", format!("cannot read {}: {e}", full.display())))?;
            density_from_csv(grid, &text).map_err(at("/mu/path"))?
        }
    };
    if let Some((cell, value)) = mu.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::scenario(
            "/mu",
            format!("the source density must be positive everywhere (cell {cell} has {value})"),
        ));
    }

    let cost = match &file.cost {
        CostFileSpec::Quadratic {} => CostSpec::quadratic(),
        CostFileSpec::ConvexDifference { p } => {
            if !(*p > 1.0 && p.is_finite()) {
                return Err(Error::scenario("/cost/p", format!("exponent must exceed 1, got {p}")));
            }
            CostSpec::power(*p).map_err(at("/cost"))?
        }
    };

    let congestion = match &file.congestion {
        CongestionFileSpec::Entropy { convention } => CongestionSpec::entropy_with(*convention),
        CongestionFileSpec::Power { alpha, a } => {
            positive(*alpha, "/congestion/alpha")?;
            positive(*a, "/congestion/a")?;
            CongestionSpec::power(*alpha, *a).map_err(at("/congestion"))?
        }
    };

    let kernel = match &file.kernel {
        KernelFileSpec::None {} => None,
        KernelFileSpec::QuadraticDistance { kappa } => {
            finite(*kappa, "/kernel/kappa")?;
            Some(InteractionKernel::QuadraticDistance { kappa: *kappa })
        }
        KernelFileSpec::CubicDistance { kappa } => {
            finite(*kappa, "/kernel/kappa")?;
            Some(InteractionKernel::CubicDistance { kappa: *kappa })
        }
        KernelFileSpec::Product { kappa } => {
            finite(*kappa, "/kernel/kappa")?;
            Some(InteractionKernel::Product { kappa: *kappa })
        }
    };
    if let Some(k) = &kernel {
        if k.declared_convex() && !k.convexity_probe(interval) {
            warnings.push(format!("kernel {} failed its convexity probe on the domain", k.label()));
        }
        if !k.declared_convex() {
            warnings.push(format!(
                "kernel {} is not convex; uniqueness is not guaranteed",
                k.label()
            ));
        }
    }

    let potential = match &file.potential {
        PotentialFileSpec::None {} => None,
        PotentialFileSpec::Poly { coeffs, center, convex } => {
            if coeffs.is_empty() {
                return Err(Error::scenario(
                    "/potential/coeffs",
                    "at least one coefficient is required",
                ));
            }
            for (i, c) in coeffs.iter().enumerate() {
                if !c.is_finite() {
                    return Err(Error::scenario(format!("/potential/coeffs/{i}"), "must be finite"));
                }
            }
            finite(*center, "/potential/center")?;
            Some(PotentialSpec::poly(coeffs.clone(), *center, *convex).map_err(at("/potential"))?)
        }
    };
    if let Some(p) = &potential {
        if p.declared_convex() && !p.convexity_probe(interval) {
            warnings.push(format!(
                "potential {} is declared convex but fails its convexity probe on the domain",
                p.label()
            ));
        }
    }

    let model = EnergyModel::new(congestion, kernel, potential, grid).map_err(at("/congestion"))?;
    if !model.congestion.satisfies_mccann() {
        warnings.push("congestion fails the displacement convexity condition".into());
    }
    let params = file.solver.params();
    params.validate().map_err(at("/solver"))?;

    let name = file.name.clone().unwrap_or_else(|| "scenario".into());
    let scenario = Scenario::new(name, mu, cost, model, file.quantile_m)
        .map_err(at("/cost"))?
        .with_support_mode(file.support_mode)
        .with_seed(file.seed);
    Ok(LoadedScenario {
        scenario,
        params,
        file,
        hash,
        warnings,
    })
}
