use std::path::PathBuf;
use std::process::{Command, Output};

use protodiff_core::model::schema::ProblemSpec;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_protodiff"));
    c.env_remove("PROTODIFF_SEED");
    c
}

fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path_str(name: &str) -> String {
    example(name).display().to_string()
}

#[test]
fn derive_reports_the_moving_branch() {
    let out = run(&["derive", &path_str("scalar_abs_above.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["yprime"][0].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert!(v["hypotheses"].as_array().unwrap().iter().all(|h| h["holds"] == true));
}

#[test]
fn derive_with_crosscheck_records_the_gap() {
    let out = run(&["derive", "--crosscheck", &path_str("halfspace_qp.json")]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["residuals"]["fd_crosscheck"].as_f64().unwrap() < 1e-6);
}

#[test]
fn validate_exit_codes() {
    assert_eq!(run(&["validate", &path_str("scalar_abs_below.json")]).status.code(), Some(0));
    let refused = run(&["validate", &path_str("abs_moving_kink.json")]);
    assert_eq!(refused.status.code(), Some(3));
    let v = json(&refused);
    assert_eq!(v["status"], "HYPOTHESIS_VIOLATED");
    assert_eq!(v["fd_label"], "oracle-only");
    // A one-level oracle cannot confirm the curved instance.
    let crude = run(&["validate", "--fd-levels", "1", "--fd-h", "0.5", &path_str("curved_constraint_qp.json")]);
    assert_eq!(crude.status.code(), Some(2));
    assert_eq!(json(&crude)["status"], "MISMATCH");
}

#[test]
fn solve_prints_the_projection() {
    let out = run(&["solve", "--at", "0", &path_str("halfspace_qp.json")]);
    assert_eq!(out.status.code(), Some(0));
    let y = &json(&out)["y"];
    assert!((y[0].as_f64().unwrap() - 0.5).abs() < 1e-10);
    assert!((y[1].as_f64().unwrap() - 0.5).abs() < 1e-10);
}

#[test]
fn parse_errors_name_the_json_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"operator": {"kind": "identity", "dim": 1},
            "function": {"kind": "weighted_abs", "a": {"c0": "one"}, "b": {"c0": 0}},
            "path": {"kind": "poly", "c0": [1.0]}}"#,
    )
    .unwrap();
    let out = run(&["derive", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("function.a.c0"));

    let missing = run(&["derive", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(run(&["derive", "--bogus"]).status.code(), Some(1));
}

#[test]
fn probe_writes_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let (main, tau, csh) = (dir.path().join("p.csv"), dir.path().join("t.csv"), dir.path().join("c.csv"));
    let out = bin()
        .args(["--sequential", "probe", &path_str("abs_quadratic_kink.json"), "--dir", "0", "--dir=-0.5"])
        .args(["-o", main.to_str().unwrap(), "--tau-csv", tau.to_str().unwrap(), "--csh-csv", csh.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(main).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("direction,lower,upper,value,class"));
    assert!(lines.next().unwrap().ends_with("FINITE_LIMIT"));
    assert!(lines.next().unwrap().ends_with("DIVERGES_PLUS_INF"));
    assert_eq!(std::fs::read_to_string(tau).unwrap().lines().count(), 1 + 2 * 20);
    assert!(std::fs::read_to_string(csh).unwrap().starts_with("tau,z,xi,beta"));
}

#[test]
fn seed_comes_from_the_environment() {
    let path = path_str("smooth_only.json");
    let a = bin().env("PROTODIFF_SEED", "7").args(["derive", &path]).output().unwrap();
    let b = run(&["--seed", "7", "derive", &path]);
    assert_eq!(a.stdout, b.stdout);
    let bad = bin().env("PROTODIFF_SEED", "seven").args(["derive", &path]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn examples_round_trip_and_build() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let spec = ProblemSpec::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let again = ProblemSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, again, "{}", path.display());
        again.build().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert_eq!(seen, 10);
}
