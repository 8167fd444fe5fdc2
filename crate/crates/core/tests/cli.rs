use std::fs;
use std::path::{Path, PathBuf};

use lqmfg::cli::{main_with, manifest_outputs_exist};
use lqmfg::model::{GameParams, InitialLaw, Scenario};
use serde_json::Value;
use tempfile::TempDir;

fn example(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name).display().to_string()
}

fn run(args: &[&str], out: &Path) -> i32 {
    let mut all = vec!["lqmfg".to_string()];
    all.extend(args.iter().map(|s| s.to_string()));
    all.push("--out".into());
    all.push(out.display().to_string());
    main_with(all)
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn zero_config(dir: &Path) -> String {
    let path = dir.join("zero.json");
    Scenario::new(GameParams::zeros(1, 1, 1, 1.0), InitialLaw::zero(1)).write(&path).unwrap();
    path.display().to_string()
}

#[test]
fn check_reports_both_examples() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["check", &example("ex1.json")], tmp.path()), 0);
    let v = json(tmp.path().join("verdict.json"));
    assert_eq!(v["solvable"], true);
    assert!(v["sup_norm"].as_f64().unwrap() < 1e8);

    assert_eq!(run(&["check", &example("ex2.json")], tmp.path()), 1);
    let v = json(tmp.path().join("verdict.json"));
    let (lo, hi) = (v["escape_lo"].as_f64().unwrap(), v["escape_hi"].as_f64().unwrap());
    assert!(0.5 < lo && hi < 1.0 && hi - lo <= 2.5e-3);
    let m = json(tmp.path().join("manifest.json"));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["command"], "check");
    assert!(manifest_outputs_exist(&tmp.path().join("manifest.json")).unwrap());
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["check", &bad.display().to_string()], tmp.path()), 2);
    assert_eq!(run(&["check", "/no/such/file.json"], tmp.path()), 2);
    assert_eq!(run(&["solve", &example("ex1.json"), "--N", "1"], tmp.path()), 2);
    assert_eq!(run(&["frobnicate"], tmp.path()), 2);

    let mut raw: Value = serde_json::from_str(&fs::read_to_string(example("ex1.json")).unwrap()).unwrap();
    raw["cost"]["R"] = serde_json::json!([[-1.0]]);
    fs::write(&bad, raw.to_string()).unwrap();
    assert_eq!(run(&["check", &bad.display().to_string()], tmp.path()), 2);
}

#[test]
fn solve_writes_trajectory_files() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["solve", &example("ex1.json"), "--N", "5"], tmp.path()), 0);
    for name in ["L1_0", "L2_0", "L3_0", "L0", "L1", "L2", "L3", "La", "Lb"] {
        let text = fs::read_to_string(tmp.path().join(format!("{name}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("t,{name}[0][0]"));
        assert_eq!(lines.count(), 1201);
    }
    for name in ["Pi1_0", "Pi2_0", "Pi3_0", "Pi0", "Pi1", "Pi2", "Pi3", "Pia", "Pib"] {
        assert!(tmp.path().join(format!("{name}.csv")).exists());
    }
    assert!(manifest_outputs_exist(&tmp.path().join("manifest.json")).unwrap());

    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["solve", &example("ex2.json")], tmp.path()), 1);
    let m = json(tmp.path().join("manifest.json"));
    assert!(m["verdicts"]["limit"]["escape_lo"].as_f64().unwrap() > 0.5);
    assert!(!tmp.path().join("L1_0.csv").exists());
}

#[test]
fn grid_points_flag_sets_rows() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["solve", &example("ex1.json"), "--grid-points", "241"], tmp.path()), 0);
    let text = fs::read_to_string(tmp.path().join("La.csv")).unwrap();
    assert_eq!(text.lines().count(), 242);
}

#[test]
fn compare_tables() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["compare", &example("ex1.json"), "--Ns", "20"], tmp.path()), 0);
    let text = fs::read_to_string(tmp.path().join("convergence.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.ends_with(','), "{row}");

    let zero = zero_config(tmp.path());
    assert_eq!(run(&["compare", &zero, "--Ns", "2,4", "--grid-points", "11"], tmp.path()), 0);
    let text = fs::read_to_string(tmp.path().join("convergence.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    for line in text.lines().skip(1) {
        for (h, cell) in header.iter().zip(line.split(',')) {
            if h.starts_with("err_") || *h == "max_err" {
                assert_eq!(cell.parse::<f64>().unwrap(), 0.0, "{h}");
            }
        }
    }
}

#[test]
fn consistency_verdicts() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["consistency", &example("ex1.json")], tmp.path()), 0);
    assert_eq!(json(tmp.path().join("consistency.json"))["pass"], true);
    assert_eq!(run(&["consistency", &example("ex2.json")], tmp.path()), 1);
    let zero = zero_config(tmp.path());
    assert_eq!(run(&["consistency", &zero, "--grid-points", "11"], tmp.path()), 0);
    assert_eq!(json(tmp.path().join("consistency.json"))["max_residual"], 0.0);
}

#[test]
fn simulate_is_reproducible_and_validated() {
    let tmp = TempDir::new().unwrap();
    let cfg = example("ex1_noise.json");
    let args = ["simulate", &cfg, "--N", "3", "--paths", "64", "--dt", "0.01", "--seed", "11", "--dump-paths", "2"];
    assert_eq!(run(&args, tmp.path()), 0);
    let first = fs::read_to_string(tmp.path().join("estimate.json")).unwrap();
    assert_eq!(run(&args, tmp.path()), 0);
    assert_eq!(first, fs::read_to_string(tmp.path().join("estimate.json")).unwrap());
    let paths = fs::read_to_string(tmp.path().join("paths.csv")).unwrap();
    assert_eq!(paths.lines().next().unwrap(), "path,t,X0[0],XN[0],Xdag[0]");
    assert!(manifest_outputs_exist(&tmp.path().join("manifest.json")).unwrap());

    assert_eq!(run(&["simulate", &cfg, "--N", "3", "--paths", "1"], tmp.path()), 2);
    assert_eq!(run(&["simulate", &cfg, "--N", "3", "--dt", "0.07"], tmp.path()), 2);
}
