use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cnot_core::config::{load_scenario, scenario_from_value, LoadedScenario};
use cnot_core::dynamics::{jko_flow, two_bumps, JkoParams};
use cnot_core::measures::{density_from_csv, DiscreteDensity, SupportMode};
use cnot_core::solver::{best_response_iterate, minimize_quantile, Scenario};
use cnot_core::transport::{kantorovich_potential_1d, w2_squared_1d};
use cnot_core::verify::{
    displacement_convexity_probe, equilibrium_residual, monge_ampere_residual_1d, purity_check,
    transport_derivative_check,
};
use cnot_core::welfare::cost_of_anarchy;
use cnot_core::Error;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{density_csv, series_csv, write, write_json};
use crate::{Check, Init, Support};

pub enum Status {
    Ok,
    NumericalFailure(String),
}

/// 1 for bad input, 2 for a numerical failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::InvalidInput(_)
            | Error::Scenario { .. }
            | Error::Io(_)
            | Error::CostNotStrictlyConvex(_)
            | Error::SourceNotPositive { .. }
            | Error::Structure(_)
            | Error::Precondition(_),
        ) => 1,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 1,
        None => 2,
    }
}

fn load(path: &Path) -> Result<LoadedScenario> {
    let loaded = load_scenario(path)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded)
}

fn read_density(scenario: &Scenario, path: &Path) -> Result<DiscreteDensity> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(density_from_csv(*scenario.grid(), &text)?)
}

fn w2(a: &DiscreteDensity, b: &DiscreteDensity) -> Result<f64> {
    Ok(w2_squared_1d(a, b, 16 * a.grid().n())?.max(0.0).sqrt())
}

#[derive(Serialize)]
struct SolveReport {
    converged: bool,
    iterations: usize,
    grad_norm: f64,
    j_value: f64,
    multiplier: f64,
    residual_sup: f64,
    residual_eq: f64,
    best_response_w2: Option<f64>,
}

pub struct SolveOverrides {
    pub best_response: bool,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub support: Option<Support>,
}

pub fn solve(path: &Path, out: &Path, opts: &SolveOverrides) -> Result<Status> {
    let mut loaded = load(path)?;
    if let Some(n) = opts.max_iters {
        loaded.params.max_iters = n;
    }
    if let Some(t) = opts.tol {
        loaded.params.grad_tol = t;
    }
    loaded.params.validate()?;
    if let Some(s) = opts.support {
        let mode = match s {
            Support::Free => SupportMode::Free,
            Support::Fixed => SupportMode::FixedEndpoints,
        };
        loaded.scenario = loaded.scenario.clone().with_support_mode(mode);
    }
    let sc = &loaded.scenario;
    let res = minimize_quantile(sc, &loaded.params, None)?;
    density_csv(&out.join("equilibrium.csv"), &res.nu)?;
    write(&out.join("quantile.csv"), &res.g.to_csv())?;
    series_csv(&out.join("history.csv"), "iteration,J", &res.history)?;
    let pair = kantorovich_potential_1d(sc.mu(), &res.nu, sc.cost(), None)?;
    write(&out.join("potentials.csv"), &pair.to_csv(&sc.grid().nodes()))?;
    let br = if opts.best_response {
        let nu = best_response_iterate(sc, &DiscreteDensity::uniform(*sc.grid()), 0.5, 200)?;
        density_csv(&out.join("best_response.csv"), &nu)?;
        Some(w2(&nu, &res.nu)?)
    } else {
        None
    };
    write_json(
        &out.join("diagnostics.json"),
        &loaded,
        SolveReport {
            converged: res.converged,
            iterations: res.iterations,
            grad_norm: res.grad_norm,
            j_value: res.j_value,
            multiplier: res.multiplier,
            residual_sup: res.residual_sup,
            residual_eq: res.residual_eq,
            best_response_w2: br,
        },
    )?;
    Ok(if res.converged {
        Status::Ok
    } else {
        Status::NumericalFailure(format!(
            "solver stopped after {} iterations with projected gradient {:.3e}",
            res.iterations, res.grad_norm
        ))
    })
}

pub fn jko(path: &Path, tau: f64, steps: usize, init: Init, init_file: Option<&Path>, out: &Path) -> Result<Status> {
    let loaded = load(path)?;
    let sc = &loaded.scenario;
    let nu0 = match (init, init_file) {
        (Init::Uniform, _) => DiscreteDensity::uniform(*sc.grid()),
        (Init::TwoBumps, _) => two_bumps(*sc.grid())?,
        (Init::File, Some(f)) => read_density(sc, f)?,
        (Init::File, None) => return Err(Error::InvalidInput("--init file needs --init-file".into()).into()),
    };
    let mut params = JkoParams::new(tau, steps);
    params.inner = loaded.params;
    let tr = jko_flow(sc, &nu0, &params)?;
    write(&out.join("trajectory.csv"), &tr.to_csv())?;
    for p in &tr.points {
        density_csv(&out.join("densities").join(format!("step_{:04}.csv", p.k)), &p.nu)?;
    }
    write_json(
        &out.join("jko.json"),
        &loaded,
        json!({
            "tau": tau,
            "steps": steps,
            "init": match init {
                Init::Uniform => "uniform",
                Init::TwoBumps => "two_bumps",
                Init::File => "file",
            },
            "j_values": tr.j_values(),
            "direct": tr.direct,
        }),
    )?;
    Ok(Status::Ok)
}

pub fn welfare(path: &Path, out: &Path) -> Result<Status> {
    let loaded = load(path)?;
    let sc = &loaded.scenario;
    let report = cost_of_anarchy(sc, &loaded.params)?;
    write_json(&out.join("welfare.json"), &loaded, &report)?;
    write(&out.join("taxes.csv"), &report.taxes_csv())?;
    density_csv(&out.join("equilibrium.csv"), &report.equilibrium)?;
    density_csv(&out.join("optimum.csv"), &report.optimum)?;
    Ok(if report.equilibrium_converged && report.optimum_converged {
        Status::Ok
    } else {
        Status::NumericalFailure("equilibrium or optimum solve did not converge".into())
    })
}

pub fn verify(path: &Path, density: Option<&Path>, checks: &[Check], out: &Path) -> Result<Status> {
    let loaded = load(path)?;
    let sc = &loaded.scenario;
    let nu = match density {
        Some(f) => read_density(sc, f)?,
        None => minimize_quantile(sc, &loaded.params, None)?.nu,
    };
    let mut body = serde_json::Map::new();
    body.insert("displacement_convex".into(), json!(sc.model().displacement_convex()));
    for check in checks {
        let (key, value) = match check {
            Check::Eq => ("residual", serde_json::to_value(equilibrium_residual(sc, &nu)?)?),
            Check::Purity => ("purity", serde_json::to_value(purity_check(sc, &nu)?)?),
            Check::Ma => (
                "monge_ampere",
                match monge_ampere_residual_1d(sc, &nu) {
                    Ok(r) => json!({ "residual": r }),
                    Err(Error::Precondition(why)) => json!({ "skipped": why }),
                    Err(e) => return Err(e.into()),
                },
            ),
            Check::Dc => {
                // geodesic from the candidate back to the population measure
                let t: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
                let report = displacement_convexity_probe(sc, &nu, sc.mu(), &t)?;
                ("displacement_convexity", serde_json::to_value(report)?)
            }
            Check::Deriv => {
                let rho = DiscreteDensity::uniform(*sc.grid());
                let report = transport_derivative_check(sc.mu(), &nu, &rho, sc.cost(), &[1e-2, 1e-3, 1e-4])?;
                ("transport_derivative", serde_json::to_value(report)?)
            }
        };
        body.insert(key.into(), value);
    }
    write_json(&out.join("verify.json"), &loaded, Value::Object(body))?;
    Ok(Status::Ok)
}

fn set_path(value: &mut Value, dotted: &str, new: Value) -> Result<()> {
    let mut cur = value;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_string(), new);
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(|| Error::Scenario {
                    pointer: format!("/{}", parts[..=i].join("/")),
                    message: "no such field".into(),
                })?
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::Scenario {
                    pointer: format!("/{}", parts[..=i].join("/")),
                    message: format!("'{part}' is not an array index"),
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| Error::Scenario {
                    pointer: format!("/{}", parts[..=i].join("/")),
                    message: format!("index out of range (length {len})"),
                })?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => bail!(Error::Scenario {
                pointer: format!("/{}", parts[..i].join("/")),
                message: "not an object".into(),
            }),
        };
    }
    Ok(())
}

fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

/// Worker count from `CNOT_THREADS`, if set.
fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("CNOT_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| Error::InvalidInput(format!("CNOT_THREADS must be a positive integer, got '{v}'")))?;
            if n == 0 {
                return Err(Error::InvalidInput("CNOT_THREADS must be positive".into()).into());
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

struct SweepRow {
    value: String,
    dir: PathBuf,
    outcome: Result<(bool, usize, f64, f64, f64)>,
}

pub fn sweep(path: &Path, param: &str, values: &[String], out: &Path) -> Result<Status> {
    if values.is_empty() {
        return Err(Error::InvalidInput("--values is empty".into()).into());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base: Value = serde_json::from_str(&text).map_err(|e| Error::Scenario {
        pointer: "/".into(),
        message: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    // validate every variant before any work starts
    let mut variants = Vec::new();
    for v in values {
        let mut doc = base.clone();
        set_path(&mut doc, param, parse_value(v))?;
        let loaded = scenario_from_value(&doc, dir)?;
        variants.push((v.clone(), doc, loaded));
    }
    let run = |(value, doc, loaded): &(String, Value, LoadedScenario)| -> SweepRow {
        let sub = out.join(format!("{param}={value}"));
        let outcome = (|| {
            let mut scen_text = serde_json::to_string_pretty(doc)?;
            scen_text.push('\n');
            write(&sub.join("scenario.json"), &scen_text)?;
            let res = minimize_quantile(&loaded.scenario, &loaded.params, None)?;
            density_csv(&sub.join("equilibrium.csv"), &res.nu)?;
            write_json(
                &sub.join("result.json"),
                loaded,
                json!({
                    "param": param,
                    "value": parse_value(value),
                    "converged": res.converged,
                    "iterations": res.iterations,
                    "j_value": res.j_value,
                    "residual_sup": res.residual_sup,
                    "residual_eq": res.residual_eq,
                }),
            )?;
            Ok((
                res.converged,
                res.iterations,
                res.j_value,
                res.residual_sup,
                res.residual_eq,
            ))
        })();
        SweepRow {
            value: value.clone(),
            dir: sub,
            outcome,
        }
    };
    let rows: Vec<SweepRow> = match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(|| variants.par_iter().map(run).collect()),
        None => variants.par_iter().map(run).collect(),
    };
    let mut summary = String::from("value,dir,converged,iterations,J,residual_sup,residual_eq\n");
    let mut failures = Vec::new();
    for row in &rows {
        let name = row
            .dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match &row.outcome {
            Ok((conv, it, j, rs, re)) => {
                let _ = writeln!(summary, "{},{name},{conv},{it},{j},{rs},{re}", row.value);
                if !conv {
                    failures.push(row.value.clone());
                }
            }
            Err(e) => {
                let _ = writeln!(summary, "{},{name},error,,,,", row.value);
                eprintln!("value {}: {e:#}", row.value);
                failures.push(row.value.clone());
            }
        }
    }
    write(&out.join("summary.csv"), &summary)?;
    Ok(if failures.is_empty() {
        Status::Ok
    } else {
        Status::NumericalFailure(format!("values without a converged solve: {}", failures.join(", ")))
    })
}
