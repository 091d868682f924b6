//! Run directories, `report.json`, and replay comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiments::Outcome;

/// Claims the tool cannot check numerically; listed in every report.
pub const UNTESTED_CLAIMS: [&str; 2] = [
    "existence of the coupling behind the almost sure invariance principle",
    "the error exponent 1/4 in the invariance principle",
];

/// Keys that differ between otherwise identical runs.
const VOLATILE: [&str; 1] = ["timestamp"];

pub fn run_dir_name(sub: &str, cfg: &ExperimentConfig) -> String {
    format!("{sub}-seed{}-{}", cfg.statistics.seed, cfg.hash())
}

/// Everything in `report.json` except the timestamp.
pub fn build_report(sub: &str, cfg: &ExperimentConfig, outcome: &Outcome) -> Value {
    let mut root = Map::new();
    for (k, v) in &outcome.results {
        root.insert(k.clone(), v.clone());
    }
    root.insert("subcommand".into(), json!(sub));
    root.insert("seed".into(), json!(cfg.statistics.seed));
    root.insert("config_hash".into(), json!(cfg.hash()));
    root.insert(
        "config".into(),
        serde_json::to_value(cfg).expect("config serializes"),
    );
    root.insert(
        "contract".into(),
        json!({ "passed": outcome.passed(), "checks": outcome.checks }),
    );
    root.insert("warnings".into(), json!(outcome.warnings));
    root.insert("untested_claims".into(), json!(UNTESTED_CLAIMS));
    let files: Vec<&str> = outcome.csvs.iter().map(|(f, _)| f.as_str()).collect();
    root.insert("files".into(), json!(files));
    sort_keys(Value::Object(root))
}

/// Rebuilds every object through a `BTreeMap` so key order is canonical.
fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<String, Value> =
                m.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Writes `report.json`, `config.toml` and the CSVs; returns the run directory.
pub fn write_run(
    out_root: &Path,
    sub: &str,
    cfg: &ExperimentConfig,
    outcome: &Outcome,
) -> Result<PathBuf, CliError> {
    let dir = out_root.join(run_dir_name(sub, cfg));
    std::fs::create_dir_all(&dir)?;
    let mut report = build_report(sub, cfg, outcome);
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    report
        .as_object_mut()
        .expect("report is an object")
        .insert("timestamp".into(), json!(now));
    let report = sort_keys(report);
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Report(e.to_string()))?;
    std::fs::write(dir.join("report.json"), text + "\n")?;
    let toml_text = toml::to_string(cfg).map_err(|e| CliError::Report(e.to_string()))?;
    std::fs::write(dir.join("config.toml"), toml_text)?;
    for (name, content) in &outcome.csvs {
        std::fs::write(dir.join(name), content)?;
    }
    Ok(dir)
}

/// A stored run read back from disk.
pub struct StoredRun {
    pub dir: PathBuf,
    pub subcommand: String,
    pub config: ExperimentConfig,
    pub report: Value,
}

pub fn load_run(report_path: &Path) -> Result<StoredRun, CliError> {
    let text = std::fs::read_to_string(report_path)
        .map_err(|e| CliError::Report(format!("{}: {e}", report_path.display())))?;
    let report: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Report(format!("{}: {e}", report_path.display())))?;
    let field = |k: &str| {
        report
            .get(k)
            .ok_or_else(|| CliError::Report(format!("report has no `{k}` field")))
    };
    let subcommand = field("subcommand")?
        .as_str()
        .ok_or_else(|| CliError::Report("`subcommand` is not a string".into()))?
        .to_string();
    let seed = field("seed")?
        .as_u64()
        .ok_or_else(|| CliError::Report("`seed` is not an unsigned integer".into()))?;
    let mut config: ExperimentConfig = serde_json::from_value(field("config")?.clone())
        .map_err(|e| CliError::Report(format!("stored config: {e}")))?;
    config.statistics.seed = seed;
    let dir = report_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok(StoredRun {
        dir,
        subcommand,
        config,
        report,
    })
}

/// First path at which two reports differ, ignoring volatile keys at the top level.
pub fn first_difference(stored: &Value, fresh: &Value) -> Option<String> {
    fn walk(a: &Value, b: &Value, path: &str, top: bool) -> Option<String> {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    if top && VOLATILE.contains(&k.as_str()) {
                        continue;
                    }
                    let p = if path.is_empty() {
                        k.clone()
                    } else {
                        format!("{path}.{k}")
                    };
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => {
                            if let Some(d) = walk(u, v, &p, false) {
                                return Some(d);
                            }
                        }
                        _ => return Some(p),
                    }
                }
                None
            }
            (Value::Array(x), Value::Array(y)) => {
                if x.len() != y.len() {
                    return Some(format!("{path}.len"));
                }
                x.iter()
                    .zip(y)
                    .enumerate()
                    .find_map(|(i, (u, v))| walk(u, v, &format!("{path}[{i}]"), false))
            }
            _ => (a != b).then(|| {
                if path.is_empty() {
                    "<root>".into()
                } else {
                    path.to_string()
                }
            }),
        }
    }
    walk(stored, fresh, "", true)
}

/// Compares stored CSV files against freshly generated contents.
pub fn first_csv_difference(dir: &Path, outcome: &Outcome) -> Result<Option<String>, CliError> {
    for (name, content) in &outcome.csvs {
        let stored = match std::fs::read(dir.join(name)) {
            Ok(b) => b,
            Err(_) => return Ok(Some(format!("{name} (missing)"))),
        };
        if stored != content.as_bytes() {
            return Ok(Some(name.clone()));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_paths_name_the_field() {
        let a = json!({"timestamp": 1, "x": {"y": [1, 2, 3]}, "z": "a"});
        let mut b = a.clone();
        b["timestamp"] = json!(2);
        assert_eq!(first_difference(&a, &b), None);
        b["x"]["y"][2] = json!(4);
        assert_eq!(first_difference(&a, &b).as_deref(), Some("x.y[2]"));
        let c = json!({"timestamp": 1, "x": {"y": [1, 2, 3]}});
        assert_eq!(first_difference(&a, &c).as_deref(), Some("z"));
    }

    #[test]
    fn keys_are_sorted_at_every_level() {
        let v = sort_keys(json!({"b": {"d": 1, "c": 2}, "a": 0}));
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, r#"{"a":0,"b":{"c":2,"d":1}}"#);
    }

    #[test]
    fn report_carries_required_fields() {
        let cfg = ExperimentConfig::default();
        let mut out = Outcome::default();
        out.results.insert("sigma2".into(), json!(0.5));
        out.checks.insert("ok".into(), true);
        let r = build_report("clt", &cfg, &out);
        for k in [
            "sigma2",
            "seed",
            "config_hash",
            "config",
            "contract",
            "untested_claims",
        ] {
            assert!(r.get(k).is_some(), "{k}");
        }
        assert_eq!(r["contract"]["passed"], json!(true));
    }
}
