use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stratope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratope"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL_BENCH: &str = r#"{
    "data": {"kind": "fixture", "num_classes": 3, "dim": 2, "n": 400, "separation": 1.5, "seed": 3},
    "ratios": [0.5, 2.0],
    "replications": 4,
    "estimators": ["IS", "DR", "SMRDR"]
}"#;

#[test]
fn bench_writes_deterministic_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bench.json", SMALL_BENCH);
    let mut results = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = stratope(&["bench", "--config", &config, "--out", out.to_str().unwrap(), "--threads", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["results.csv", "fig_dr_vs_is.csv", "fig_smrdr_vs_mrdr.csv", "replications.csv", "manifest.json"] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        results.push(fs::read_to_string(out.join("results.csv")).unwrap());
    }
    assert_eq!(results[0], results[1]);
    let lines: Vec<&str> = results[0].lines().collect();
    assert_eq!(lines[0], "estimator,ratio,relative_rmse,rmse_se,M,wall_ms");
    assert_eq!(lines.len(), 1 + 3 * 2);
}

#[test]
fn seed_flag_changes_the_replications() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bench.json", SMALL_BENCH);
    let read = |seed: &str| {
        let out = dir.path().join(seed);
        let o = stratope(&["bench", "--config", &config, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
        fs::read_to_string(out.join("replications.csv")).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn bad_configs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "unknown.json", r#"{"replicatons": 3}"#);
    assert_eq!(stratope(&["bench", "--config", &unknown]).status.code(), Some(2));
    let invalid = write(dir.path(), "invalid.json", r#"{"replications": 0}"#);
    assert_eq!(stratope(&["bench", "--config", &invalid]).status.code(), Some(2));
    let garbage = write(dir.path(), "garbage.json", "not json");
    assert_eq!(stratope(&["verify", "--config", &garbage]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(
        stratope(&["gen-fixture", "--config", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn gen_fixture_to_file_and_stdout_agree() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", r#"{"num_classes": 4, "dim": 3, "n": 50, "seed": 8}"#);
    let file = dir.path().join("fixture.csv");
    let o = stratope(&["gen-fixture", "--config", &spec, "--out", file.to_str().unwrap()]);
    assert!(o.status.success());
    let written = fs::read_to_string(&file).unwrap();
    let printed = stratope(&["gen-fixture", "--config", &spec]);
    assert_eq!(String::from_utf8(printed.stdout).unwrap(), written);

    let rows: Vec<&str> = written.lines().collect();
    assert_eq!(rows.len(), 51);
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 4));
}

#[test]
fn verify_small_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "suite.json", r#"{"instances": 3, "seed": 5}"#);
    let report = dir.path().join("report.json");
    let o = stratope(&["verify", "--config", &config, "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("PASS")));
    assert!(!stdout.contains("FAIL"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert!(json["checks"].as_array().is_some_and(|c| !c.is_empty()));
}

#[test]
fn verify_flags_corrupted_weights() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "suite.json", r#"{"instances": 3, "corrupt_weights": true}"#);
    let o = stratope(&["verify", "--config", &config]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL"));
}

#[test]
fn dilemma_without_monte_carlo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dilemma.json");
    let o = stratope(&["dilemma", "--replications", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    let sides = json.as_array().unwrap();
    assert_eq!(sides.len(), 2);
    let (a, b) = (&sides[0]["instance"], &sides[1]["instance"]);
    assert!(a["var_is"].as_f64().unwrap() < a["var_pw"].as_f64().unwrap());
    assert!(b["var_is"].as_f64().unwrap() > b["var_pw"].as_f64().unwrap());
}
