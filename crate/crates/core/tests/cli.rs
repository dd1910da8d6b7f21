use std::path::Path;
use std::process::{Command, Output};

fn hypocoerce(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypocoerce"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("HYPOCOERCE_THREADS", "2")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, json: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

const SMALL: &str = r#"{
  "grid": {"R": 8.0, "nx": 32},
  "nv": 6,
  "evolve": {"dt": 0.05, "T": 30.0}
}"#;

#[test]
fn validation_errors_exit_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    for (json, field) in [
        (r#"{"potential": {"kind": "harmonic", "lambda": -1.0, "beta": 0.0, "omega": 1.0}}"#, "potential.lambda"),
        (r#"{"nv": 1}"#, "`nv`"),
        (r#"{"evolve": {"dt": 0.0}}"#, "evolve.dt"),
    ] {
        let cfg = write(tmp.path(), "bad.json", json);
        let out = hypocoerce(&["certify"], &cfg, tmp.path());
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(field), "{err}");
    }
    let cfg = write(tmp.path(), "broken.json", "{ not json");
    assert_eq!(hypocoerce(&["gap"], &cfg, tmp.path()).status.code(), Some(2));
}

#[test]
fn evolve_writes_all_artifacts_in_fresh_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    for _ in 0..2 {
        let out = hypocoerce(&["evolve"], &cfg, &tmp.path().join("runs"));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let dirs: Vec<_> = std::fs::read_dir(tmp.path().join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 2);
    for d in dirs {
        for f in ["config.json", "certificate.json", "trace.csv", "report.json"] {
            assert!(d.join(f).is_file(), "{} missing in {}", f, d.display());
        }
        let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
        assert!(trace.starts_with("t,dev,entropy,envelope,mass\n"));
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
        assert!(report["fitted_rate"].as_f64().unwrap() > 0.0);
        let cert: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.join("certificate.json")).unwrap()).unwrap();
        for key in ["normL_num", "normA_num", "boundL", "boundA", "C", "A_const", "epsilon", "delta"] {
            assert!(cert[key].is_number(), "{key}");
        }
    }
}

#[test]
fn gap_stops_early() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let out = hypocoerce(&["gap"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let dir = tmp.path().join("small-gap");
    assert!(dir.join("report.json").is_file());
    assert!(!dir.join("certificate.json").exists() && !dir.join("trace.csv").exists());
}

#[test]
fn sweep_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let json = r#"{
      "potential": {"kind": "harmonic_cosine", "lambda": 1.0, "beta": 0.0, "omega": 2.0},
      "grid": {"R": 8.0, "nx": 32},
      "nv": 6,
      "evolve": {"dt": 0.05, "T": 30.0},
      "sweep": {"gamma": [0.5, 1.0], "beta": [0.0, 0.5], "nx": [32]}
    }"#;
    let cfg = write(tmp.path(), "sw.json", json);
    let out = hypocoerce(&["sweep"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary = std::fs::read_to_string(tmp.path().join("sw-sweep/summary.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert_eq!(lines[0], "gamma,beta,nx,alpha,delta,fitted_rate");
    assert_eq!(lines.len(), 5);
    assert!(tmp.path().join("sw-sweep/point-003/report.json").is_file());
}

#[test]
fn bad_thread_count_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.json", SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_hypocoerce"))
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .env("HYPOCOERCE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
