use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn asiplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asiplab"))
        .args(args)
        .env_remove("ASIP_LAB_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 6] = [
    "--set",
    "numerics.grid_points=64",
    "--set",
    "experiment.thermo.x_samples=2",
    "--set",
    "experiment.thermo.test_functions=3",
];

fn run_thermo(out: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let mut args = vec!["run", "thermo", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    let o = asiplab(&args);
    let path = PathBuf::from(String::from_utf8_lossy(&o.stdout).trim());
    (o, path)
}

#[test]
fn unknown_config_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run_thermo(dir.path(), &["--set", "numerics.grid_pionts=12"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("grid_pionts"), "{}", stderr(&o));
}

#[test]
fn unknown_key_in_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[statistics]\nsed = 3\n").unwrap();
    let o = asiplab(&["run", "thermo", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sed"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = asiplab(&[
        "run",
        "thermodynamics",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flat_potential_thermo_report() {
    let dir = tempfile::tempdir().unwrap();
    let (o, path) = run_thermo(
        dir.path(),
        &[
            "--set",
            "system.potential_amp=[0.0, 0.0]",
            "--set",
            "system.branch_count=[2, 2]",
            "--seed",
            "9",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dirname = path
        .parent()
        .unwrap()
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .to_string();
    assert!(dirname.starts_with("thermo-seed9-"), "{dirname}");
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!((r["lambda"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["contract"]["passed"], true);
    assert_eq!(r["untested_claims"].as_array().unwrap().len(), 2);
    for f in r["files"].as_array().unwrap() {
        assert!(path.parent().unwrap().join(f.as_str().unwrap()).exists());
    }
    assert!(path.parent().unwrap().join("config.toml").exists());
}

#[test]
fn replay_accepts_fresh_and_rejects_tampered_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (o, path) = run_thermo(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ok = asiplab(&["replay", path.to_str().unwrap(), "--threads", "3"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));

    let mut r: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    r["timestamp"] = Value::from(0);
    std::fs::write(&path, serde_json::to_string_pretty(&r).unwrap()).unwrap();
    let still = asiplab(&["replay", path.to_str().unwrap()]);
    assert_eq!(still.status.code(), Some(0), "{}", stderr(&still));

    r["lambda"] = Value::from(r["lambda"].as_f64().unwrap() + 1e-15);
    std::fs::write(&path, serde_json::to_string_pretty(&r).unwrap()).unwrap();
    let bad = asiplab(&["replay", path.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("lambda"), "{}", stderr(&bad));
}

#[test]
fn replay_detects_modified_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = run_thermo(dir.path(), &[]);
    let csv = path.parent().unwrap().join("state.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    std::fs::write(&csv, text.replacen('0', "1", 1)).unwrap();
    let bad = asiplab(&["replay", path.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("state.csv"), "{}", stderr(&bad));
}

#[test]
fn output_root_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "thermo"];
    args.extend(SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_asiplab"))
        .args(&args)
        .env("ASIP_LAB_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let path = PathBuf::from(String::from_utf8_lossy(&o.stdout).trim());
    assert!(path.starts_with(dir.path()));
}

#[test]
fn config_command_prints_resolved_toml() {
    let o = asiplab(&["config", "--set", "statistics.trials=7"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    let t: toml::Table = text.parse().unwrap();
    assert_eq!(t["statistics"]["trials"].as_integer(), Some(7));
}
