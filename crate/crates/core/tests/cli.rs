mod common;

use std::process::Command;

use common::pglib;
use dcattack::cli::run;
use serde_json::Value;

fn run_cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["dcattack"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn path(name: &str) -> String {
    pglib(name).display().to_string()
}

#[test]
fn missing_case_exits_2_with_error_json() {
    let (code, out) = run_cli(&["attack", "/no/such/case.m", "--seed", "1"]);
    assert_eq!(code, 2);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["error"]["kind"], "io");
    assert!(v["error"]["message"].as_str().unwrap().contains("/no/such/case.m"));
}

#[test]
fn binary_reports_missing_case() {
    let out = Command::new(env!("CARGO_BIN_EXE_dcattack")).args(["squeeze", "/no/such/case.m"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["error"]["message"].is_string());
}

#[test]
fn malformed_case_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.m");
    std::fs::write(&bad, "function mpc = bad\nmpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0;\n];\n").unwrap();
    let (code, out) = run_cli(&["defend", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["error"]["kind"], "parse");
}

#[test]
fn attack_echoes_overrides_and_writes_delta_csv() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("attack.json");
    let csv = dir.path().join("delta.csv");
    let (code, _) = run_cli(&[
        "attack",
        &path("57_ieee"),
        "--seed",
        "7",
        "--eps",
        "1e-4",
        "--json",
        json.to_str().unwrap(),
        "--delta-csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["schema"], "dcattack.attack/1");
    assert_eq!(v["manifest"]["config"]["eps"], 1e-4);
    assert_eq!(v["manifest"]["seed"], 7);
    assert_eq!(v["certified"], true);
    let norm_sq = v["norm_sq"].as_f64().unwrap();
    assert!((norm_sq - 0.0547).abs() / 0.0547 < 0.02, "{norm_sq}");
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("bus,delta_pu,percent_of_load\n"));
    assert_eq!(rows.lines().count() - 1, v["delta"].as_array().unwrap().len());
}

#[test]
fn defend_modes_and_verification_count() {
    let (code, out) = run_cli(&["defend", &path("5_pjm"), "--seed", "3", "--verify-samples", "5000"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    let t = v["t"].as_f64().unwrap();
    assert!((t - 6.29).abs() / 6.29 < 0.02, "{t}");
    assert_eq!(v["verification"]["samples"], 5000);
    assert_eq!(v["manifest"]["config"]["verify_samples"], 5000);

    let (code, out) = run_cli(&["defend", &path("5_pjm"), "--seed", "3", "--policy", "rank1-uniform"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["kind"], "rank1-uniform");
    assert!(v["t"].as_f64().unwrap() <= t + 1e-9);
}

#[test]
fn absent_seed_is_generated_and_recorded() {
    let (code, out) = run_cli(&["defend", &path("5_pjm"), "--policy", "warm-start", "--verify-samples", "10"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["manifest"]["seed"].is_u64());
}

#[test]
fn squeeze_writes_report_trace_and_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("out.json");
    let trace = dir.path().join("out.csv");
    let dump = dir.path().join("mats.json");
    let (code, out) = run_cli(&[
        "--threads",
        "2",
        "squeeze",
        &path("14_ieee"),
        "--budget",
        "120",
        "--seed",
        "1",
        "--json",
        json.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--dump-matrices",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{out}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["matched"], true);
    assert!((v["ub"].as_f64().unwrap() - 0.178).abs() / 0.178 < 0.01);
    assert_eq!(v["manifest"]["threads"], 2);
    assert_eq!(v["manifest"]["outputs"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("time,round,side,value\n"));
    assert!(csv.lines().count() > 2);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert_eq!(m["a"]["rows"].as_array().unwrap().len(), m["c"].as_array().unwrap().len());
}

#[test]
fn table_renders_each_format() {
    let cases = [path("5_pjm"), path("14_ieee"), path("30_as")];
    for (format, check) in [("md", "| case |"), ("csv", "case,lb,ub"), ("json", "\"gap_percent\"")] {
        let mut args = vec!["table", "--seed", "1", "--format", format];
        args.extend(cases.iter().map(String::as_str));
        let (code, out) = run_cli(&args);
        assert_eq!(code, 0);
        assert!(out.contains(check), "{format}: {out}");
        for name in ["5_pjm", "14_ieee", "30_as"] {
            assert!(out.contains(name));
        }
    }
    let (_, md) = run_cli(&["table", "--seed", "1", &cases[0], &cases[1], &cases[2]]);
    assert_eq!(md.lines().count(), 2 + 3);
}

#[test]
fn table_without_cases_is_a_usage_error() {
    let (code, _) = run_cli(&["table"]);
    assert_eq!(code, 2);
}

#[test]
fn convert_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("case5.json");
    let (code, _) = run_cli(&["convert", &path("5_pjm"), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let (code, report) = run_cli(&["defend", out.to_str().unwrap(), "--seed", "1", "--verify-samples", "10"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&report).unwrap();
    assert!((v["t"].as_f64().unwrap() - 6.286).abs() < 1e-2);
}
