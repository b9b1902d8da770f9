use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "seed = 3
[noise]
mode = \"structured\"
delta_d = 3.0
delta_a = 0.0175
ratio = 0.1
seed = 7
[dataset]
train = 120
val = 30
test = 30
[training]
epochs = 3
[ensemble]
members = 2
";

fn mmloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmloc")).args(args).output().expect("mmloc runs")
}

fn small_scenario(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_scenario_names_the_path() {
    let out = mmloc(&["simulate", "--scenario", "/nonexistent/where.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/where.toml"));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let out = mmloc(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_prints_provenance_then_rows() {
    let out = mmloc(&["simulate", "--trials", "20", "--rho", "0.1,1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# tool: mmloc");
    assert!(lines.iter().any(|l| l.starts_with("# config_sha256: ")));
    let header = lines.iter().position(|l| !l.starts_with('#')).unwrap();
    assert!(lines[header].starts_with("target,n_a,rho"));
    assert_eq!(lines.len() - header - 1, 2);
}

#[test]
fn json_output_parses() {
    let out = mmloc(&["crlb", "--format", "json", "--rho", "0.1,1,10"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["provenance"]["tool"], "mmloc");
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn seed_flag_changes_results_and_is_recorded() {
    let a = mmloc(&["simulate", "--trials", "20", "--seed", "1"]);
    let b = mmloc(&["simulate", "--trials", "20", "--seed", "2"]);
    let (a, b) = (String::from_utf8(a.stdout).unwrap(), String::from_utf8(b.stdout).unwrap());
    assert!(a.contains("# seed: 1") && b.contains("# seed: 2"));
    assert_ne!(a, b);
}

#[test]
fn dataset_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    assert!(mmloc(&["gen-dataset", "--scenario", &sc, "--out", &p("data")]).status.success());
    for f in ["train.csv", "val.csv", "test.csv", "test.csv.meta.json", "provenance.json"] {
        assert!(dir.path().join("data").join(f).exists(), "{f} missing");
    }
    assert!(mmloc(&["train", "--scenario", &sc, "--data", &p("data"), "--out", &p("models")]).status.success());
    let out = mmloc(&["eval", "--scenario", &sc, "--data", &p("data"), "--models", &p("models"), "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["pipeline"].as_str().unwrap()).collect();
    for want in ["wls", "blackbox", "nn_wls", "nn_ls"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
}

#[test]
fn mismatched_model_width_exits_with_dimension_code() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    assert!(mmloc(&["gen-dataset", "--scenario", &sc, "--out", &p("six")]).status.success());
    assert!(mmloc(&["train", "--scenario", &sc, "--data", &p("six"), "--out", &p("models")]).status.success());
    assert!(mmloc(&["gen-dataset", "--scenario", &sc, "--na", "7", "--out", &p("seven")]).status.success());
    let out = mmloc(&["eval", "--scenario", &sc, "--na", "7", "--data", &p("seven"), "--models", &p("models"), "--pipeline", "nn-wls"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
