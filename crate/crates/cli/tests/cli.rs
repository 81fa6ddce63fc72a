use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nspe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nspe")).args(args).output().unwrap()
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_the_presets() {
    for name in ["paper.json", "scalar.json"] {
        let out = nspe(&["validate", "--config", preset(name).to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(String::from_utf8_lossy(&out.stdout).contains("connected true"));
    }
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = nspe(&[
        "run",
        "--config",
        preset("paper.json").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--runs",
        "2",
        "--iters",
        "300",
        "--seed",
        "9",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["traces.csv", "links.csv", "summary.json"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["runs"], 2);
    assert_eq!(summary["config"]["iterations"], 300);
    assert_eq!(summary["config"]["master_seed"], 9);
}

#[test]
fn bias_writes_a_report_without_simulating() {
    let dir = tempfile::tempdir().unwrap();
    let out = nspe(&[
        "bias",
        "--config",
        preset("scalar.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bias.json")).unwrap()).unwrap();
    let blind = &report["variants"][2];
    assert_eq!(blind["variant"], "blind-dnspe");
    assert_eq!(blind["converged"], true);
    let b0 = blind["pairs"][0]["bias"][0].as_f64().unwrap();
    let b1 = blind["pairs"][1]["bias"][0].as_f64().unwrap();
    assert!((b0 - 0.5).abs() < 1e-12 && (b1 + 0.5).abs() < 1e-12);
    assert_eq!(blind["pairs"][0]["node"], 1);
    let non_coop = &report["variants"][0];
    assert_eq!(non_coop["pairs"][0]["bias"][0].as_f64().unwrap(), 0.0);
    assert_eq!(report["nodes"][0]["step_size_bound"].as_f64().unwrap(), 2.0);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut file: serde_json::Value = serde_json::from_str(&fs::read_to_string(preset("scalar.json")).unwrap()).unwrap();
    file["runs"] = 0.into();
    let path = dir.path().join("bad.json");
    fs::write(&path, file.to_string()).unwrap();
    let out = nspe(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("runs"));

    fs::write(&path, "{ not json").unwrap();
    let out = nspe(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_and_unwritable_output_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = nspe(&["validate", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));

    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = nspe(&[
        "run",
        "--config",
        preset("scalar.json").to_str().unwrap(),
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn divergence_exits_with_code_3_after_writing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut file: serde_json::Value = serde_json::from_str(&fs::read_to_string(preset("scalar.json")).unwrap()).unwrap();
    file["network"]["nodes"][0]["step_size"] = 6.0.into();
    file["runs"] = 2.into();
    file["iterations"] = 5000.into();
    let path = dir.path().join("div.json");
    fs::write(&path, file.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = nspe(&["run", "--config", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["variants"][0]["diverged_runs"], 2);
}
