//! End-to-end runs of the `hierot` binary.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hierot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hierot")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn put(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const NORTH: &str = r#"{"manifold":{"kind":"sphere","ambient_dim":3},"level":0,"measure":{"point":[0,0,1]}}"#;
const SOUTH: &str = r#"{"manifold":{"kind":"sphere","ambient_dim":3},"level":0,"measure":{"point":[0,0,-1]}}"#;

/// `½δ_{δ₀} + ½δ_{δ₂}` on the line.
const SPLIT: &str = r#"{"manifold":{"kind":"euclidean","ambient_dim":1},"level":2,"measure":
  {"weights":[0.5,0.5],"atoms":[
    {"weights":[1],"atoms":[{"point":[0]}]},
    {"weights":[1],"atoms":[{"point":[2]}]}]}}"#;

/// `δ_{½δ₀ + ½δ₂}` on the line.
const MERGED: &str = r#"{"manifold":{"kind":"euclidean","ambient_dim":1},"level":2,"measure":
  {"weights":[1],"atoms":[{"weights":[0.5,0.5],"atoms":[{"point":[0]},{"point":[2]}]}]}}"#;

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn distance_between_poles() {
    let dir = TempDir::new().unwrap();
    let (n, so) = (put(dir.path(), "n.json", NORTH), put(dir.path(), "s.json", SOUTH));
    let o = hierot(&["distance", s(&n), s(&so)]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    close(v["w2"].as_f64().unwrap(), PI, 1e-10);
    assert_eq!(v["level"], 0);
}

#[test]
fn distance_level_two_and_plan_dump() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (put(dir.path(), "a.json", SPLIT), put(dir.path(), "b.json", MERGED));
    let plan = dir.path().join("plan.json");
    let o = hierot(&["distance", s(&a), s(&b), "--plan", s(&plan)]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    close(v["w2"].as_f64().unwrap(), 2f64.sqrt(), 1e-12);
    close(v["w2_sq"].as_f64().unwrap(), 2.0, 1e-12);
    assert_eq!(v["plan_summary"]["certified"], true);
    assert_eq!(v["plan_summary"]["rows"], 2);
    assert_eq!(v["plan_summary"]["cols"], 1);

    let p: Value = serde_json::from_str(&fs::read_to_string(&plan).unwrap()).unwrap();
    assert_eq!(p["level"], 2);
    assert_eq!(p["children"].as_array().unwrap().len(), 2);
    close(p["value"].as_f64().unwrap(), 2.0, 1e-12);
}

#[test]
fn distance_to_self_is_zero() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (put(dir.path(), "a.json", SPLIT), put(dir.path(), "b.json", SPLIT));
    let v = stdout_json(&hierot(&["distance", s(&a), s(&b)]));
    assert_eq!(v["w2"].as_f64().unwrap(), 0.0);
}

#[test]
fn malformed_input_exit_codes() {
    let dir = TempDir::new().unwrap();
    let good = put(dir.path(), "good.json", SPLIT);
    let junk = put(dir.path(), "junk.json", r#"{"manifold":{"kind":"torus","ambient_dim":2},"level":0,"measure":{"point":[0,0]}}"#);
    let o = hierot(&["distance", s(&good), s(&junk)]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());

    let mass = put(
        dir.path(),
        "mass.json",
        r#"{"manifold":{"kind":"euclidean","ambient_dim":1},"level":1,"measure":{"weights":[0.5,0.6],"atoms":[{"point":[0]},{"point":[1]}]}}"#,
    );
    assert_eq!(code(&hierot(&["distance", s(&good), s(&mass)])), 2);
    assert_eq!(code(&hierot(&["distance", s(&good), s(&dir.path().join("missing.json"))])), 2);

    // Declared level disagrees with the tree depth.
    let lying = put(
        dir.path(),
        "lying.json",
        r#"{"manifold":{"kind":"euclidean","ambient_dim":1},"level":3,"measure":{"weights":[1],"atoms":[{"point":[0]}]}}"#,
    );
    assert_eq!(code(&hierot(&["distance", s(&good), s(&lying)])), 3);

    // Comparing measures of different levels.
    let level1 = put(
        dir.path(),
        "l1.json",
        r#"{"manifold":{"kind":"euclidean","ambient_dim":1},"level":1,"measure":{"weights":[1],"atoms":[{"point":[0]}]}}"#,
    );
    assert_eq!(code(&hierot(&["distance", s(&good), s(&level1)])), 3);
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn geodesic_between_diracs() {
    let dir = TempDir::new().unwrap();
    let a = put(dir.path(), "a.json", r#"{"manifold":{"kind":"euclidean","ambient_dim":2},"level":0,"measure":{"point":[0,0]}}"#);
    let b = put(dir.path(), "b.json", r#"{"manifold":{"kind":"euclidean","ambient_dim":2},"level":0,"measure":{"point":[3,4]}}"#);
    let out = dir.path().join("geo");
    let o = hierot(&["geodesic", s(&a), s(&b), "--steps", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    close(v["w2"].as_f64().unwrap(), 5.0, 1e-12);
    assert_eq!(v["pass"], true);

    let mid: Value = serde_json::from_str(&fs::read_to_string(out.join("measure_002.json")).unwrap()).unwrap();
    close(mid["measure"]["point"][0].as_f64().unwrap(), 1.5, 1e-12);
    close(mid["measure"]["point"][1].as_f64().unwrap(), 2.0, 1e-12);
    assert!(out.join("plan.json").exists());

    let (header, rows) = csv_rows(&out.join("speed.csv"));
    assert_eq!(header, "t,w2_to_start,w2_to_end,speed_deviation");
    assert_eq!(rows.len(), 5);
    for r in &rows {
        close(r[1], 5.0 * r[0], 1e-12);
        close(r[2], 5.0 * (1.0 - r[0]), 1e-12);
    }
}

#[test]
fn geodesic_level_two_has_constant_speed() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (put(dir.path(), "a.json", SPLIT), put(dir.path(), "b.json", MERGED));
    let out = dir.path().join("geo");
    let o = hierot(&["geodesic", s(&a), s(&b), "--steps", "10", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert!(v["max_deviation"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["files"].as_array().unwrap().len(), 11);
    let (_, rows) = csv_rows(&out.join("speed.csv"));
    assert!(rows.iter().all(|r| r[3] <= 1e-8));
}

#[test]
fn geodesic_single_step_writes_endpoints() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (put(dir.path(), "a.json", NORTH), put(dir.path(), "b.json", SOUTH));
    let out = dir.path().join("geo");
    assert_eq!(code(&hierot(&["geodesic", s(&a), s(&b), "--steps", "1", "--out", s(&out)])), 0);
    let mut names: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("measure_"))
        .collect();
    names.sort();
    assert_eq!(names, ["measure_000.json", "measure_001.json"]);
    assert_eq!(code(&hierot(&["geodesic", s(&a), s(&b), "--steps", "0", "--out", s(&out)])), 2);
}

#[test]
fn flow_decreases_the_functional() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "target.json", MERGED);
    let spec = put(
        dir.path(),
        "spec.json",
        r#"{"terms":[{"half_w2_sq_to":"target.json","weight":1},{"potential":"quadratic","center":[1],"weight":0.5}]}"#,
    );
    let init = put(dir.path(), "init.json", SPLIT);
    let trace = dir.path().join("trace.csv");
    let o = hierot(&[
        "flow", "--spec", s(&spec), "--init", s(&init), "--tau", "0.2", "--iters", "20", "--trace", s(&trace),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["monotone"], true);
    assert!(v["final_value"].as_f64().unwrap() < v["initial_value"].as_f64().unwrap());

    let (header, rows) = csv_rows(&trace);
    assert_eq!(header, "step,value,step_norm,leaves");
    assert_eq!(rows.len(), 21);
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1] + 1e-12));
}

#[test]
fn check_subset_is_deterministic() {
    let a = hierot(&["check", "--suite", "metric", "--seed", "7"]);
    let b = hierot(&["check", "--suite", "metric", "--seed", "7"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["pass"], true);
    assert_eq!(v["suites"], serde_json::json!(["metric"]));
}

#[test]
fn check_all_passes() {
    let o = hierot(&["check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v = stdout_json(&o);
    assert_eq!(v["seed"], 0);
    assert_eq!(v["suites"].as_array().unwrap().len(), 4);
}

#[cfg(feature = "fault-pt-sign")]
#[test]
fn injected_transport_fault_is_caught() {
    let o = hierot(&["check", "--suite", "geodesic"]);
    assert_eq!(code(&o), 4);
    let v = stdout_json(&o);
    let failed: Vec<_> = v["properties"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["pass"] == false)
        .map(|p| p["name"].as_str().unwrap().to_string())
        .collect();
    assert!(failed.iter().any(|n| n.starts_with("pt_")), "{failed:?}");
}

#[test]
fn distance_between_lifted_poles() {
    let dir = TempDir::new().unwrap();
    let lift = |z: i32| {
        format!(r#"{{"manifold":{{"kind":"sphere","ambient_dim":3}},"level":1,"measure":{{"weights":[1],"atoms":[{{"point":[0,0,{z}]}}]}}}}"#)
    };
    let (n, so) = (put(dir.path(), "n.json", &lift(1)), put(dir.path(), "s.json", &lift(-1)));
    let o = hierot(&["distance", s(&n), s(&so)]);
    assert_eq!(code(&o), 0);
    close(stdout_json(&o)["w2"].as_f64().unwrap(), PI, 1e-10);
}
