//! Experiment configuration read from TOML with dotted keys.
//!
//! A `table1` or `table2` experiment starts from a built-in preset and the
//! user's file is merged on top, so a config only needs to name what differs.

use std::path::{Path, PathBuf};

use copula_vi::elbo::TrainConfig;
use copula_vi::flow::{FamilyKind, InitConfig};
use copula_vi::oracle::GridSpec;
use copula_vi::targets::BnnConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Which experiment a config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Logistic regression on the synthetic two-class dataset.
    Table1,
    /// The centred horseshoe toy posterior.
    Table2,
    #[default]
    Custom,
}

impl std::str::FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table1" => Ok(Self::Table1),
            "table2" => Ok(Self::Table2),
            "custom" => Ok(Self::Custom),
            _ => Err(CliError::Config(format!("unknown experiment {s:?}; expected table1, table2 or custom"))),
        }
    }
}

fn default_y_obs() -> f64 {
    0.01
}

/// Target density and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Gaussian {
        mean: Vec<f64>,
        /// Lower-triangular factor L of the covariance LLᵀ, row by row.
        cov_factor: Vec<Vec<f64>>,
    },
    Logistic {
        #[serde(default)]
        dataset_seed: u64,
    },
    Horseshoe {
        #[serde(default = "default_y_obs")]
        y_obs: f64,
    },
    TinyBnn {
        #[serde(default)]
        data_seed: u64,
        #[serde(default)]
        network: BnnConfig,
    },
}

fn copula_rot() -> FamilyKind {
    FamilyKind::CopulaRot
}

fn one() -> usize {
    1
}

/// Variational family, its initialization and restart policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    #[serde(default = "copula_rot")]
    pub kind: FamilyKind,
    #[serde(default)]
    pub init: InitConfig,
    /// Independent initializations tried before the main run.
    #[serde(default = "one")]
    pub restarts: usize,
    /// Iterations each restart is trained for before the best is kept.
    #[serde(default)]
    pub pilot_iterations: usize,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self { kind: FamilyKind::CopulaRot, init: InitConfig::default(), restarts: 1, pilot_iterations: 0 }
    }
}

/// Which output files a run writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitConfig {
    pub trace_csv: bool,
    pub samples_csv: bool,
    pub oracle_json: bool,
    pub summary_json: bool,
    /// Record elapsed wall-clock time; outputs are then no longer
    /// reproducible byte for byte.
    pub wall_clock: bool,
    /// Rows written to the samples file.
    pub samples: usize,
    /// Also write the intermediate states v, u and x′ of each draw.
    pub sample_intermediates: bool,
}

impl Default for EmitConfig {
    fn default() -> Self {
        Self {
            trace_csv: true,
            samples_csv: false,
            oracle_json: true,
            summary_json: true,
            wall_clock: false,
            samples: 10_000,
            sample_intermediates: false,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Experiment,
    pub target: TargetConfig,
    #[serde(default)]
    pub family: FamilyConfig,
    /// Optimizer settings. `train.seed` is always replaced by `seed`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit: EmitConfig,
    /// Quadrature box for the oracle; a per-target default when absent.
    #[serde(default)]
    pub oracle: Option<GridSpec>,
}

const TABLE1_PRESET: &str = r#"
target.kind = "logistic"
train.learning_rate = 0.01
train.final_lr_fraction = 0.05
train.iterations = 80000
family.restarts = 6
family.pilot_iterations = 10000
"#;

const TABLE2_PRESET: &str = r#"
target.kind = "horseshoe"
target.y_obs = 0.01
train.learning_rate = 0.002
train.iterations = 20000
"#;

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn preset(experiment: Experiment) -> toml::Table {
    let text = match experiment {
        Experiment::Table1 => TABLE1_PRESET,
        Experiment::Table2 => TABLE2_PRESET,
        Experiment::Custom => "",
    };
    text.parse().expect("built-in presets are valid TOML")
}

impl ExperimentConfig {
    /// Parses a config, applying the preset its `experiment` key selects.
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let experiment = match user.get("experiment") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(CliError::Config("experiment must be a string".into())),
            None => Experiment::Custom,
        };
        Self::from_table(experiment, user)
    }

    /// The preset for a table with `overrides` merged on top.
    pub fn from_table(experiment: Experiment, overrides: toml::Table) -> Result<Self, CliError> {
        let mut table = preset(experiment);
        merge(&mut table, overrides);
        if experiment == Experiment::Table1 && !table.get("target").and_then(|t| t.get("dataset_seed")).is_some() {
            let seed = table.get("seed").and_then(toml::Value::as_integer).unwrap_or(0);
            if let Some(toml::Value::Table(t)) = table.get_mut("target") {
                t.insert("dataset_seed".into(), toml::Value::Integer(seed));
            }
        }
        let mut cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.experiment = experiment;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Replaces the master seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.family.restarts == 0 {
            return Err(CliError::Config("family.restarts must be at least 1".into()));
        }
        if let Some(g) = &self.oracle {
            g.validate()?;
        }
        if let TargetConfig::Gaussian { mean, cov_factor } = &self.target {
            if mean.is_empty() || cov_factor.len() != mean.len() {
                return Err(CliError::Config("gaussian target needs a mean and a square factor of the same size".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the resolved config, leaving out the output directory so
    /// identical runs in different places share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("configs serialize to JSON");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
