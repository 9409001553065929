use std::path::PathBuf;
use std::process::{Command, Output};

use bicap::biharm::read_field;
use bicap::cli::report::Table;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bicap"))
}

fn scene(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

#[test]
fn kernel_suite_exits_zero() {
    let out = run(&["verify", "--suite", "kernel"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_of(&out);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["passed"], true);
    assert_eq!(r["results"]["suites"][0]["checks"].as_array().unwrap().len(), 6);
    assert!(r["provenance"]["timings"]["kernel"].is_number());
}

#[test]
fn fourpoint_on_cone() {
    let out = run(&["model", "fourpoint", "--alpha", "0.7854", "--beta", "0.7854"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_of(&out);
    assert!(r["results"]["lambda_min"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(r["scene_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn wiener_cusp_series_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    let json = dir.path().join("report.json");
    let out = run(&[
        "wiener",
        "--scene",
        scene("cusp_log.scene").to_str().unwrap(),
        "--a",
        "2",
        "--jmax",
        "12",
        "--csv",
        csv.to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(r["results"]["verdict"]["kind"], "NumericTrend");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 12);
    let t = Table::parse_csv(&text).unwrap();
    let sums = r["results"]["partial_sums"].as_array().unwrap();
    for (row, s) in t.rows.iter().zip(sums) {
        assert_eq!(row[4], s.as_f64().unwrap());
    }
    let bytes = std::fs::read(scene("cusp_log.scene")).unwrap();
    assert_eq!(r["scene_hash"], bicap::cli::scene::sha256_hex(&bytes));
}

#[test]
fn malformed_scene_names_the_key() {
    let out = run(&["capacity", "--scene", scene("broken.scene").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("geometry.r_inner"));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("typo.scene");
    std::fs::write(&p, "[geometry]\nkind = \"shell\"\nr_inner = 1.2\nr_outer = 1.4\n[solver]\ngird = 24\n").unwrap();
    let out = run(&["capacity", "--scene", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.gird"));
    let out = run(&["capacity", "--scene", dir.path().join("missing.scene").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["verify", "--suite", "bogus"]).status.code(), Some(1));
    assert_eq!(run(&["model", "fourpoint", "--alpha", "0.5", "--beta", "1.2"]).status.code(), Some(1));
    let out = bin().args(["verify", "--suite", "kernel"]).env("BICAP_THREADS", "0").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failed_verification_exits_two() {
    let out = run(&["verify", "--suite", "demo", "--grid", "16"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_of(&out)["passed"], false);
}

#[test]
fn no_timings_is_reproducible() {
    let a = run(&["model", "instability", "--no-timings"]);
    let b = bin().args(["model", "instability", "--no-timings"]).env("BICAP_THREADS", "1").output().unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(json_of(&a)["provenance"].get("timings").is_none());
}

#[test]
fn capacity_scene() {
    let out = run(&["capacity", "--scene", scene("shell.scene").to_str().unwrap(), "--grid", "16"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_of(&out);
    let res = &r["results"];
    let cap = res["cap_inf"].as_f64().unwrap();
    let b2: f64 = [0.6f64, 0.3, -0.5, 0.2].iter().map(|v| v * v).sum();
    assert!(cap > 0.0 && cap <= res["cap_p"]["value"].as_f64().unwrap() / b2 * (1.0 + 1e-9));
    assert_eq!(r["provenance"]["grid"], 16);
}

#[test]
fn solve_dumps_field() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("u.bin");
    let out = run(&["solve", "--scene", scene("solve_blob.scene").to_str().unwrap(), "--grid", "16", "--field", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let field = read_field(&f).unwrap();
    assert_eq!(field.values.len(), 17 * 17 * 17);
    let m = json_of(&out)["results"]["max_abs"].as_f64().unwrap();
    assert_eq!(field.max_abs(), m);
}

#[test]
fn cone_and_green_scenes() {
    let out = run(&["model", "cone", "--scene", scene("cone.scene").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let caps: Vec<f64> = json_of(&out)["results"]["capacity"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(caps.windows(2).all(|w| w[1] < w[0]));
    let out = run(&["green", "--scene", scene("green_ball.scene").to_str().unwrap(), "--grid", "24"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(json_of(&out)["results"]["pairs"].as_u64().unwrap() >= 16);
}
