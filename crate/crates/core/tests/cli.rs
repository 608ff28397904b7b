use std::path::Path;

use fk_quasicrystal::chain::QuasicrystalChain;
use fk_quasicrystal::cli::{read_chain, run};
use fk_quasicrystal::config::Configuration;
use fk_quasicrystal::substitution::SubstitutionRule;
use serde_json::Value;

fn fkq(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(args.iter().copied(), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn chain_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("chain.json");
    let (code, out, _) = fkq(&["chain", "--rule", "fib", "--window", "-50:50", "--out", p(&file)]);
    assert_eq!(code, 0);
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["command"], "chain");
    let back = read_chain(&file).unwrap();
    let direct = QuasicrystalChain::build(&SubstitutionRule::fibonacci(), (-50.0, 50.0)).unwrap();
    assert_eq!(back.atoms(), direct.atoms());
    assert_eq!(back.labels(), direct.labels());
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    for key in ["rule", "lambda", "atoms", "labels", "window"] {
        assert!(raw.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn towers_report_the_level_matrix() {
    let (code, out, _) = fkq(&["towers", "--depth", "3"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    let t = &v["result"]["towers"];
    assert_eq!(t["k"], 2);
    assert_eq!(t["homology"], serde_json::json!([[2, 1], [1, 1]]));
    assert_eq!(t["levels"].as_array().unwrap().len(), 4);
}

#[test]
fn construct_then_verify_and_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.csv");
    let diag = dir.path().join("diag.json");
    let (code, out, err) = fkq(&[
        "construct", "--rule", "fib", "--counts", "2,1", "--level", "0", "--refine", "2", "--window", "-200:200", "--out", p(&cfg),
        "--diagnostics", p(&diag),
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!((v["result"]["rho0"].as_f64().unwrap() - 0.854_102_0).abs() < 1e-7);
    let d: Value = serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
    assert_eq!(d["occupancy_exact"], true);
    let c = Configuration::read_csv(&cfg).unwrap();
    assert!(c.len() > 400 && c.is_monotone());

    let (code, out, _) = fkq(&["verify", "--config", p(&cfg), "--checks", "borne,turc,el", "--levels", "0:2"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["result"]["violations"], 0);
    assert!(v["result"]["report"]["el"]["interior_max_residual"].as_f64().unwrap() < 1e-9);

    let bounds = dir.path().join("bounds.csv");
    let (code, out, _) = fkq(&["rotation", "--config", p(&cfg), "--levels", "0:2", "--out", p(&bounds)]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!((v["result"]["slope"].as_f64().unwrap() - 0.854).abs() < 1e-2);
    let text = std::fs::read_to_string(&bounds).unwrap();
    assert!(text.starts_with("level,lo,hi,slope\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn construct_from_a_target_rotation_number() {
    let (code, out, err) = fkq(&["construct", "--rho", "0.8541", "--tol", "1e-4"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["result"]["approximation"]["relative_gap"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn minimize_writes_the_segment() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("seg.csv");
    let (code, out, _) = fkq(&["minimize", "--left", "-3", "--right", "17", "--bonds", "14", "--out", p(&file)]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["result"]["residual"].as_f64().unwrap() <= 1e-10);
    let c = Configuration::read_csv(&file).unwrap();
    assert_eq!(c.len(), 15);
    assert_eq!(c.atoms[0], -3.0);
    assert_eq!(c.atoms[14], 17.0);
}

#[test]
fn twist_orbit_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("orbit.csv");
    let (code, _, _) = fkq(&["twist", "orbit", "--theta0", "0.0", "--p0", "0.5", "--steps", "50", "--out", p(&file)]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,theta,p,loop_level0,offset"));
    assert_eq!(lines.count(), 51);
}

#[test]
fn exit_codes() {
    assert_eq!(fkq(&["--help"]).0, 0);
    let (code, _, err) = fkq(&["chain", "--bogus"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"));
    assert_eq!(fkq(&["frobnicate"]).0, 1);
    assert_eq!(fkq(&["chain", "--window", "5:10"]).0, 1);
    assert_eq!(fkq(&["chain", "--rule", "nope"]).0, 1);
    let (code, _, err) = fkq(&["minimize", "--left", "0", "--right", "30", "--bonds", "20", "--max-iter", "1", "--starts", "0"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn inline_rule_json_is_accepted() {
    let rule = serde_json::to_string(&SubstitutionRule::thue_morse().to_spec()).unwrap();
    let (code, out, err) = fkq(&["chain", "--rule", &rule, "--window", "-5:5"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["result"]["atoms"], 13);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = ["construct", "--counts", "3,2", "--refine", "1", "--window", "-100:100"];
    let a = fkq(&args);
    let b = fkq(&args);
    assert_eq!(a, b);
    let bin = env!("CARGO_BIN_EXE_fkq");
    let run = |threads: &str| std::process::Command::new(bin).args(args).env("FK_THREADS", threads).output().unwrap().stdout;
    assert_eq!(run("1"), run("3"));
    assert_eq!(String::from_utf8(run("2")).unwrap(), a.1);
}
