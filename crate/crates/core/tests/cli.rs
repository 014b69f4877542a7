use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use kronic::experiments::{self, read_table, ExperimentConfig, ExperimentName, ExperimentResult};
use kronic::systems::Trajectory;

fn kronic(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kronic"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn summary(dir: &Path) -> ExperimentResult {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn list_names_every_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kronic(&["list"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ExperimentName::ALL {
        assert!(text.contains(name.as_str()), "missing {}", name.as_str());
    }
    let out = kronic(&["list", "--json"], tmp.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let entries = v.as_array().unwrap();
    assert_eq!(entries.len(), 8);
    assert!(entries.iter().all(|e| e["topic"].is_string() && e["description"].is_string()));
}

#[test]
fn run_writes_summary_and_round_trippable_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kronic(&["run", "slow_manifold_case2", "--out", "case2"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let dir = tmp.path().join("case2");
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    for key in ["name", "config", "checks", "files", "wall_time_seconds"] {
        assert!(raw.get(key).is_some(), "summary lacks {key}");
    }
    let s = summary(&dir);
    assert!(s.all_pass());
    assert_eq!(s.config["x0"], "1,1");
    for f in &s.files {
        let path = dir.join(f);
        if f.starts_with("traj_") {
            let t = Trajectory::read_csv(std::fs::File::open(&path).unwrap()).unwrap();
            assert!(!t.is_empty());
        } else if f.ends_with(".csv") {
            let (header, rows) = read_table(&path).unwrap();
            assert!(rows.iter().all(|r| r.len() == header.len()));
        } else if f.ends_with(".json") {
            let _: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        } else {
            assert!(!std::fs::read_to_string(&path).unwrap().is_empty());
        }
    }
}

#[test]
fn exit_code_reflects_checks_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let fail = kronic(&["run", "gyre_nonautonomous", "--out", "g"], tmp.path());
    assert_eq!(fail.status.code(), Some(1));
    let bad = kronic(&["run", "pendulum_energy", "--no_such_key", "1"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8(bad.stderr).unwrap();
    assert!(err.contains("no_such_key") && err.contains("horizon"), "{err}");
    let unknown = kronic(&["run", "no_such_experiment"], tmp.path());
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn cli_overrides_beat_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("cfg.txt"), "# case 2\nhorizon = 40\nr_phi=2\n").unwrap();
    let out = kronic(
        &["run", "slow_manifold_case2", "--config", "cfg.txt", "--horizon", "45", "--out", "o"],
        tmp.path(),
    );
    assert!(out.status.code().is_some());
    let s = summary(&tmp.path().join("o"));
    assert_eq!(s.config["horizon"], "45");
    assert_eq!(s.config["r_phi"], "2");
    assert_eq!(s.config["mu"], "0.1");
}

#[test]
fn compare_prints_the_controller_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kronic(&["compare", "case1", "--out", "c1"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for row in ["linearized LQR", "KRONIC in y", "feedback linearization", "not-implemented"] {
        assert!(text.contains(row), "missing {row}");
    }
    let (header, rows) = read_table(&tmp.path().join("c1/comparison.csv")).unwrap();
    assert_eq!(header[0], "controller");
    assert_eq!(rows.len(), 5);
    let out = kronic(&["compare", "case2", "--out", "c2"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("unstabilizable"));
}

fn strip_timing(mut v: serde_json::Value) -> serde_json::Value {
    v.as_object_mut().unwrap().remove("wall_time_seconds");
    for c in v["checks"].as_array_mut().unwrap() {
        if c["id"] == "runtime" {
            c.as_object_mut().unwrap().remove("value");
        }
    }
    v
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for name in [ExperimentName::DoubleWellHop, ExperimentName::DuffingIdentify] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let mut cfg = ExperimentConfig::new(name);
            cfg.output_dir = tmp.path().join(format!("{}_{run}", name.as_str()));
            let res = experiments::run(&cfg).unwrap();
            let mut files = BTreeMap::new();
            for f in res.files.iter().filter(|f| f.as_str() != "timing.csv") {
                files.insert(f.clone(), std::fs::read(cfg.output_dir.join(f)).unwrap());
            }
            let s: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(cfg.output_dir.join("summary.json")).unwrap()).unwrap();
            outputs.push((strip_timing(s), files));
        }
        assert_eq!(outputs[0].0, outputs[1].0, "{} summary differs", name.as_str());
        assert_eq!(outputs[0].1, outputs[1].1, "{} files differ", name.as_str());
    }
}

#[test]
fn halving_dt_keeps_every_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ExperimentName::ALL {
        let verdicts = |dt: Option<&str>, tag: &str| {
            let mut cfg = ExperimentConfig::new(name);
            if let Some(dt) = dt {
                cfg.set("dt", dt).unwrap();
            }
            cfg.output_dir = tmp.path().join(format!("{}_{tag}", name.as_str()));
            let res = experiments::run(&cfg).unwrap();
            assert!(res.error.is_none(), "{}: {:?}", name.as_str(), res.error);
            res.checks.into_iter().map(|c| (c.id, c.pass)).collect::<Vec<_>>()
        };
        let base = verdicts(None, "base");
        let half = verdicts(Some("0.0005"), "half");
        assert_eq!(base, half, "{}", name.as_str());
    }
}
