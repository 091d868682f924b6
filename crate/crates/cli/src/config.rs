//! Experiment configuration: TOML sections mirroring the library modules,
//! with defaults for every key and dotted-path overrides.

use std::path::Path;

use asiplab::fiber::SystemParams;
use asiplab::grid::Interp;
use asiplab::limits::{Assumption6Params, BlockConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub grid_points: usize,
    pub interp: Interp,
    pub depth: usize,
    pub depth_max: usize,
    pub depth_tol: f64,
    /// Perturbation radius for all frequency arguments.
    pub eps0: f64,
    /// `σ²` at or below this is treated as the degenerate branch.
    pub sigma2_floor: f64,
    pub sampler_grid: usize,
    pub sampler_memory: usize,
    pub sampler_table_cap: usize,
    pub burn_in: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            grid_points: 1024,
            interp: Interp::Cubic,
            depth: 40,
            depth_max: 160,
            depth_tol: 1e-12,
            eps0: 1.0,
            sigma2_floor: 1e-3,
            sampler_grid: 256,
            sampler_memory: 0,
            sampler_table_cap: 4096,
            burn_in: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Statistics {
    pub seed: u64,
    pub trials: usize,
    /// Orbit length for direct variance and CLT samples.
    pub n: usize,
    /// Initial covariance-series truncation, doubled up to `m_max`.
    pub m: usize,
    pub m_max: usize,
    pub tail_tol: f64,
    pub n_base_samples: usize,
}

impl Default for Statistics {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: 2000,
            n: 10_000,
            m: 8,
            m_max: 64,
            tail_tol: 1e-4,
            n_base_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermoExperiment {
    pub x_samples: usize,
    pub chain_length: usize,
    pub test_functions: usize,
}

impl Default for ThermoExperiment {
    fn default() -> Self {
        Self {
            x_samples: 20,
            chain_length: 10,
            test_functions: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapExperiment {
    pub instances: usize,
    pub n_max: usize,
    /// Knots of the random piecewise-linear test functions.
    pub knots: usize,
}

impl Default for GapExperiment {
    fn default() -> Self {
        Self {
            instances: 20,
            n_max: 20,
            knots: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsExperiment {
    pub x_samples: usize,
    pub n_max: usize,
    pub r_grid: Vec<f64>,
    pub instances: usize,
    pub operator_n_max: usize,
    pub cone_instances: usize,
    pub cone_n_max: usize,
}

impl Default for BoundsExperiment {
    fn default() -> Self {
        Self {
            x_samples: 100,
            n_max: 30,
            r_grid: vec![0.0, 0.25, 0.5, 1.0],
            instances: 20,
            operator_n_max: 20,
            cone_instances: 50,
            cone_n_max: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingExperiment {
    pub draws: usize,
    pub n_max: usize,
    pub r_max: f64,
    pub n_base_samples: usize,
}

impl Default for EncodingExperiment {
    fn default() -> Self {
        Self {
            draws: 10,
            n_max: 6,
            r_max: 0.9,
            n_base_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionHExperiment {
    pub block: BlockConfig,
    pub k_list: Vec<usize>,
    pub n_base_samples: usize,
}

impl Default for ConditionHExperiment {
    fn default() -> Self {
        Self {
            block: BlockConfig::default(),
            k_list: vec![0, 1, 2, 3, 4, 5, 6, 8, 10],
            n_base_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Assumption6Experiment {
    pub n_list: Vec<usize>,
    pub n_draws: usize,
    pub r_max: f64,
    pub n_pairs: usize,
    pub max_depth: i64,
    pub beta: f64,
}

impl Default for Assumption6Experiment {
    fn default() -> Self {
        let p = Assumption6Params::default();
        Self {
            n_list: p.n_list,
            n_draws: p.n_draws,
            r_max: p.r_max,
            n_pairs: p.n_pairs,
            max_depth: p.max_depth,
            beta: p.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayBaseExperiment {
    pub n_samples: usize,
    pub lags: Vec<i64>,
    /// Both observables read this many symbols.
    pub window: i64,
}

impl Default for DecayBaseExperiment {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            lags: vec![1, 2, 4, 8, 16],
            window: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltExperiment {
    pub histogram_bins: usize,
}

impl Default for CltExperiment {
    fn default() -> Self {
        Self { histogram_bins: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LilExperiment {
    pub n_max: usize,
    pub trials: usize,
}

impl Default for LilExperiment {
    fn default() -> Self {
        Self {
            n_max: 100_000,
            trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoboundaryExperiment {
    /// Constant `c` in `g = k − k∘T + c`.
    pub value: f64,
    pub n_list: Vec<usize>,
    pub trials: usize,
}

impl Default for CoboundaryExperiment {
    fn default() -> Self {
        Self {
            value: 0.3,
            n_list: vec![100, 1000, 10_000],
            trials: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiments {
    pub thermo: ThermoExperiment,
    pub gap: GapExperiment,
    pub bounds: BoundsExperiment,
    pub encoding: EncodingExperiment,
    pub condition_h: ConditionHExperiment,
    pub assumption6: Assumption6Experiment,
    pub decay_base: DecayBaseExperiment,
    pub clt: CltExperiment,
    pub lil: LilExperiment,
    pub coboundary: CoboundaryExperiment,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemParams,
    pub numerics: Numerics,
    pub statistics: Statistics,
    pub experiment: Experiments,
}

impl ExperimentConfig {
    /// Reads an optional TOML file, applies `KEY=VALUE` overrides, and checks
    /// every key against the schema.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(&serde_json::to_value(self).expect("config serializes"))
            .expect("json");
        hex::encode(Sha256::digest(&canon))[..12].to_string()
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a string.
fn apply_override(table: &mut toml::Table, text: &str) -> Result<(), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{text}` is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!(
            "override key `{key}` has an empty segment"
        )));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override `{key}`: `{seg}` is not a section"))
        })?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}
