use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"))
}

fn lab(args: &[&str], cfg: &Path, out: &Path, threads: Option<&str>) -> i32 {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_perron-lab"));
    cmd.args(args).arg("--config").arg(cfg).arg("--out").arg(out);
    match threads {
        Some(t) => cmd.env("PERRON_LAB_THREADS", t),
        None => cmd.env_remove("PERRON_LAB_THREADS"),
    };
    cmd.output().unwrap().status.code().unwrap()
}

fn summary(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn header(path: PathBuf) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn rows(path: PathBuf) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn subcommands_write_the_documented_tables() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path();
    assert_eq!(lab(&["solve"], &config("solve"), o, None), 0);
    assert_eq!(header(o.join("solve.csv")), "node_id,x,y,u");
    assert_eq!(lab(&["obstacle"], &config("obstacle"), o, None), 0);
    assert_eq!(header(o.join("obstacle.csv")), "node_id,x,y,u");
    assert_eq!(lab(&["capacity"], &config("capacity"), o, None), 0);
    assert_eq!(header(o.join("capacity.csv")), "set_id,h,box_side,value");
    assert_eq!(rows(o.join("capacity.csv")).len(), 6);
    for kind in ["wos", "closed-form", "bf-obstacle"] {
        assert_eq!(lab(&["oracle", kind], &config(&format!("oracle-{kind}")), o, None), 0, "{kind}");
    }
    let s = summary(o.join("solve.json"));
    assert_eq!(s["status"], "pass");
    for a in s["assertions"].as_array().unwrap() {
        assert!(a["invariant"].as_str().unwrap().starts_with("dirichlet:"));
    }
}

#[test]
fn perron_reruns_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("perron-corner");
    assert_eq!(lab(&["perron"], &cfg, a.path(), Some("1")), 0);
    assert_eq!(lab(&["perron"], &cfg, b.path(), Some("3")), 0);
    let csv = fs::read(a.path().join("perron.csv")).unwrap();
    assert_eq!(csv, fs::read(b.path().join("perron.csv")).unwrap());
    assert_eq!(fs::read(a.path().join("perron.json")).unwrap(), fs::read(b.path().join("perron.json")).unwrap());
    assert_eq!(header(a.path().join("perron.csv")), "mesh_level,j,gap,dist,psi_norm,capacity_of_E");
    assert_eq!(rows(a.path().join("perron.csv")).len(), 3 * 4);
}

#[test]
fn walk_on_spheres_output_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("oracle-wos");
    assert_eq!(lab(&["oracle", "wos"], &cfg, a.path(), Some("1")), 0);
    assert_eq!(lab(&["oracle", "wos"], &cfg, b.path(), Some("4")), 0);
    assert_eq!(fs::read(a.path().join("oracle-wos.csv")).unwrap(), fs::read(b.path().join("oracle-wos.csv")).unwrap());
}

#[test]
fn invariance_with_empty_perturbation_passes() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["experiment"], &config("invariance-empty"), out.path(), None), 0);
    for r in rows(out.path().join("invariance.csv")) {
        assert!(r[2].parse::<f64>().unwrap() <= 2e-10, "{r:?}");
    }
    let s = summary(out.path().join("invariance.json"));
    assert_eq!(s["exit_code"], 0);
    assert!(s["assertions"]
        .as_array()
        .unwrap()
        .iter()
        .any(|a| a["name"].as_str().unwrap().contains("empty perturbation")));
}

#[test]
fn uniqueness_with_a_perturbed_candidate_fails_with_a_distance_table() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["experiment"], &config("uniqueness-edge"), out.path(), None), 2);
    let table = rows(out.path().join("uniqueness.csv"));
    assert_eq!(table.len(), 2);
    for r in &table {
        assert!(r[2].parse::<f64>().unwrap() >= 0.5);
        assert_eq!(r[4], "false");
    }
    assert_eq!(summary(out.path().join("uniqueness.json"))["status"], "assertion-failure");
}

#[test]
fn poisson_counterexample_reports_decay_and_growth() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["experiment"], &config("poisson-counterexample"), out.path(), None), 0);
    let s = summary(out.path().join("poisson-counterexample.json"));
    let res: Vec<f64> = s["metrics"]["far_residual"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let max: Vec<f64> = s["metrics"]["max_abs_u"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
    assert!(max.windows(2).all(|w| w[1] > w[0]), "{max:?}");
    for r in rows(out.path().join("poisson-counterexample.csv")) {
        assert_eq!(r[4], "bounded");
    }
}

#[test]
fn edge_perturbation_is_detected_by_the_invariance_experiment() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["experiment"], &config("invariance-edge"), out.path(), None), 0);
    let s = summary(out.path().join("invariance.json"));
    let far = s["metrics"]["direct_gap_far_amplitude_1"].as_array().unwrap();
    assert!(far.iter().all(|v| v.as_f64().unwrap() > 0.5));
}

#[test]
fn remaining_experiments_pass() {
    for name in ["monotone-convergence", "monotone-data", "resolutivity"] {
        let out = tempfile::tempdir().unwrap();
        assert_eq!(lab(&["experiment"], &config(name), out.path(), None), 0, "{name}");
        let s = summary(out.path().join(format!("{name}.json")));
        assert!(!s["assertions"].as_array().unwrap().is_empty());
    }
}

#[test]
fn config_errors_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"experiment": "nope"}"#).unwrap();
    assert_eq!(lab(&["experiment"], &bad, dir.path(), None), 4);
    assert_eq!(lab(&["experiment"], &dir.path().join("missing.json"), dir.path(), None), 4);
    // the solve config has no experiment id
    assert_eq!(lab(&["experiment"], &config("solve"), dir.path(), None), 4);
    // obstacle command without an obstacle
    assert_eq!(lab(&["obstacle"], &config("solve"), dir.path(), None), 4);
    assert_eq!(lab(&["solve"], &config("solve"), dir.path(), Some("0")), 4);
    let code = Command::new(env!("CARGO_BIN_EXE_perron-lab")).arg("frobnicate").output().unwrap().status.code();
    assert_eq!(code, Some(4));
    let code = Command::new(env!("CARGO_BIN_EXE_perron-lab")).arg("--help").output().unwrap().status.code();
    assert_eq!(code, Some(0));
}

#[test]
fn solver_failure_exits_with_3_and_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("solve")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["tolerances"] = serde_json::json!({"solver": 1e-300});
    let cfg = dir.path().join("tight.json");
    fs::write(&cfg, v.to_string()).unwrap();
    assert_eq!(lab(&["solve"], &cfg, dir.path(), None), 3);
    assert!(rows(dir.path().join("solve.csv")).len() > 100);
    let s = summary(dir.path().join("solve.json"));
    assert_eq!(s["status"], "solver-failure");
    assert!(s["error"].as_str().unwrap().contains("no convergence"));
}
