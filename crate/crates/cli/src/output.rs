use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cnot_core::config::LoadedScenario;
use cnot_core::measures::DiscreteDensity;
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fields every JSON artifact carries.
#[derive(Serialize)]
pub struct Header<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario: &'a str,
    pub scenario_hash: &'a str,
    pub congestion: String,
    pub convention: &'static str,
    pub support_mode: &'static str,
    pub cost: String,
    pub grid_n: usize,
    pub quantile_m: usize,
    pub seed: Option<u64>,
    pub warnings: &'a [String],
}

pub fn header(loaded: &LoadedScenario) -> Header<'_> {
    let sc = &loaded.scenario;
    Header {
        tool: "cnot",
        version: VERSION,
        scenario: sc.name(),
        scenario_hash: &loaded.hash,
        congestion: sc.model().congestion.label(),
        convention: sc.model().congestion.convention_label(),
        support_mode: sc.support_mode().label(),
        cost: sc.cost().label(),
        grid_n: sc.grid().n(),
        quantile_m: sc.quantile_m(),
        seed: sc.seed(),
        warnings: &loaded.warnings,
    }
}

#[derive(Serialize)]
struct WithHeader<'a, T: Serialize> {
    #[serde(flatten)]
    header: Header<'a>,
    #[serde(flatten)]
    body: T,
}

pub fn write_json<T: Serialize>(path: &Path, loaded: &LoadedScenario, body: T) -> Result<()> {
    let doc = WithHeader {
        header: header(loaded),
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write(path, &text)
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn density_csv(path: &Path, nu: &DiscreteDensity) -> Result<()> {
    write(path, &nu.to_csv())
}

pub fn series_csv(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut out = format!("{header}\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    write(path, &out)
}
