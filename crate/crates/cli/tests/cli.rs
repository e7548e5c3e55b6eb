use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn cnot(args: &[&str]) -> Output {
    cnot_env(args, &[])
}

fn cnot_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cnot"));
    cmd.args(args).env_remove("CNOT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, idx: usize) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_header(doc: &Value, name: &str) {
    assert_eq!(doc["tool"], "cnot");
    assert_eq!(doc["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(doc["scenario"], name);
    assert_eq!(doc["scenario_hash"].as_str().unwrap().len(), 64);
    for key in ["convention", "support_mode", "congestion", "cost"] {
        assert!(doc[key].is_string(), "{key} missing");
    }
}

#[test]
fn solve_uniform_writes_a_uniform_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnot(&["solve", "--scenario", s(&scenario("uniform")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let nu = column(&dir.path().join("equilibrium.csv"), 1);
    assert_eq!(nu.len(), 256);
    assert!(nu.iter().all(|v| (v - 1.0).abs() <= 1e-9));
    for f in ["quantile.csv", "history.csv", "potentials.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let doc = json(&dir.path().join("diagnostics.json"));
    assert_header(&doc, "uniform");
    assert_eq!(doc["convention"], "s_log_s_minus_s");
    assert_eq!(doc["support_mode"], "free");
    assert_eq!(doc["converged"], true);
    assert!((doc["j_value"].as_f64().unwrap() + 1.0).abs() <= 1e-9);
}

#[test]
fn solve_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnot(&[
        "solve",
        "--scenario",
        s(&scenario("uniform")),
        "--out",
        s(dir.path()),
        "--support",
        "fixed",
        "--tol",
        "1e-8",
        "--best-response",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&dir.path().join("diagnostics.json"));
    assert_eq!(doc["support_mode"], "fixed_endpoints");
    assert!(doc["best_response_w2"].as_f64().unwrap() <= 1e-6);
    assert!(dir.path().join("best_response.csv").is_file());
}

#[test]
fn iteration_cap_exits_with_numerical_failure_but_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnot(&[
        "solve",
        "--scenario",
        s(&scenario("fig3_style")),
        "--out",
        s(dir.path()),
        "--max-iters",
        "2",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("numerical failure"));
    assert_eq!(json(&dir.path().join("diagnostics.json"))["converged"], false);
}

#[test]
fn invalid_scenarios_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = json(&scenario("uniform"));
    doc["congestion"] = serde_json::json!({ "kind": "power", "alpha": -2 });
    let bad = dir.path().join("bad.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let out = cnot(&["solve", "--scenario", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("/congestion/alpha"), "{}", stderr(&out));

    let missing = cnot(&["solve", "--scenario", s(&dir.path().join("absent.json"))]);
    assert_eq!(code(&missing), 1);

    let bad_tol = cnot(&[
        "solve",
        "--scenario",
        s(&scenario("uniform")),
        "--tol",
        "-1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&bad_tol), 1);
}

#[test]
fn outputs_are_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = cnot(&[
            "solve",
            "--scenario",
            s(&scenario("convex_entropy_kernel")),
            "--out",
            s(d),
        ]);
        assert_eq!(code(&out), 0);
    }
    for f in [
        "equilibrium.csv",
        "quantile.csv",
        "history.csv",
        "potentials.csv",
        "diagnostics.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn jko_writes_a_trajectory_and_step_densities() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnot(&[
        "jko",
        "--scenario",
        s(&scenario("convex_entropy_potential")),
        "--tau",
        "0.5",
        "--steps",
        "3",
        "--init",
        "two_bumps",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("k,J,W2_step\n"));
    let j = column(&dir.path().join("trajectory.csv"), 1);
    assert_eq!(j.len(), 4);
    assert!(j.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    for k in 0..=3 {
        assert!(dir.path().join(format!("densities/step_{k:04}.csv")).is_file());
    }
    let doc = json(&dir.path().join("jko.json"));
    assert_header(&doc, "convex_entropy_potential");
    assert_eq!(doc["init"], "two_bumps");
    assert!(doc["direct"]["w2_to_direct"].is_number());
}

#[test]
fn jko_file_init_needs_a_file() {
    let out = cnot(&[
        "jko",
        "--scenario",
        s(&scenario("uniform")),
        "--tau",
        "1",
        "--steps",
        "1",
        "--init",
        "file",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn welfare_reports_a_cost_of_anarchy_above_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnot(&[
        "welfare",
        "--scenario",
        s(&scenario("fig2_style")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&dir.path().join("welfare.json"));
    assert_header(&doc, "fig2_style");
    assert!(doc["cost_of_anarchy"].as_f64().unwrap() >= 1.0 - 1e-9);
    assert!(doc["sc_optimum"].as_f64().unwrap() <= doc["sc_equilibrium"].as_f64().unwrap() + 1e-9);
    let taxes = fs::read_to_string(dir.path().join("taxes.csv")).unwrap();
    assert!(taxes.starts_with("node,tax_paper,tax_marginal\n"));
    assert_eq!(taxes.lines().count(), 257);
}

#[test]
fn verify_certifies_a_supplied_density() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("convex_entropy_kernel");
    let solve = cnot(&["solve", "--scenario", s(&sc), "--out", s(&dir.path().join("eq"))]);
    assert_eq!(code(&solve), 0);
    let out = cnot(&[
        "verify",
        "--scenario",
        s(&sc),
        "--density",
        s(&dir.path().join("eq/equilibrium.csv")),
        "--checks",
        "eq,ma",
        "--out",
        s(&dir.path().join("v")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&dir.path().join("v/verify.json"));
    assert_header(&doc, "convex_entropy_kernel");
    assert!(doc["residual"]["residual_eq"].as_f64().unwrap() <= 1e-3);
    assert!(doc["monge_ampere"]["residual"].as_f64().unwrap() <= 1e-3);
    assert!(doc.get("purity").is_none());
}

#[test]
fn verify_runs_every_check_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnot(&[
        "verify",
        "--scenario",
        s(&scenario("power_convex")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&dir.path().join("verify.json"));
    assert_eq!(doc["purity"]["pure"], true);
    assert!(doc["monge_ampere"]["skipped"].is_string());
    assert!(doc["displacement_convexity"]["max_violation"].as_f64().unwrap() <= 1e-8);
    assert!(doc["transport_derivative"]["errors"].is_array());
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnot_env(
        &[
            "sweep",
            "--scenario",
            s(&scenario("convex_entropy_kernel")),
            "--param",
            "kernel.kappa",
            "--values",
            "0,1e-4,1e-3",
            "--out",
            s(dir.path()),
        ],
        &[("CNOT_THREADS", "2")],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for v in ["0", "1e-4", "1e-3"] {
        let sub = dir.path().join(format!("kernel.kappa={v}"));
        for f in ["scenario.json", "equilibrium.csv", "result.json"] {
            assert!(sub.join(f).is_file(), "{v}/{f}");
        }
        let doc = json(&sub.join("scenario.json"));
        assert_eq!(doc["kernel"]["kappa"].as_f64().unwrap(), v.parse::<f64>().unwrap());
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "value,dir,converged,iterations,J,residual_sup,residual_eq");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(2) == Some("true")));
}

#[test]
fn sweep_rejects_bad_paths_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let base = scenario("convex_entropy_kernel");
    let bad_path = cnot(&[
        "sweep",
        "--scenario",
        s(&base),
        "--param",
        "nope.kappa",
        "--values",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&bad_path), 1);
    assert!(stderr(&bad_path).contains("/nope"));
    let bad_value = cnot(&[
        "sweep",
        "--scenario",
        s(&base),
        "--param",
        "congestion.kind",
        "--values",
        "cubic",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&bad_value), 1);
    let bad_threads = cnot_env(
        &[
            "sweep",
            "--scenario",
            s(&base),
            "--param",
            "kernel.kappa",
            "--values",
            "0",
            "--out",
            s(dir.path()),
        ],
        &[("CNOT_THREADS", "0")],
    );
    assert_eq!(code(&bad_threads), 1);
}
