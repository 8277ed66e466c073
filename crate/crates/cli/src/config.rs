use std::path::{Path, PathBuf};

use bcgan::classifiers::{default_roster, Algorithm, PretrainConfig};
use bcgan::compat::InterpretabilityConfig;
use bcgan::data::{IngestSpec, ToyKind};
use bcgan::gan::GanConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Synthetic 2-D task; the test split uses a seed derived from the
    /// global one.
    Toy {
        kind: ToyKind,
        n_train: usize,
        n_test: usize,
        noise: f64,
    },
    /// Raw CSV files; scaling and categories are fitted on `train`.
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(flatten)]
        ingest: IngestSpec,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Toy {
            kind: ToyKind::TwoGaussians,
            n_train: 1000,
            n_test: 1000,
            noise: 0.06,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub roster: Vec<Algorithm>,
    /// Rows to generate; defaults to the training-set size.
    pub synthetic_size: Option<usize>,
    pub harden_one_hot: bool,
    pub interpretability: bool,
    pub interpretability_config: InterpretabilityConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            roster: default_roster(),
            synthetic_size: None,
            harden_one_hot: true,
            interpretability: true,
            interpretability_config: InterpretabilityConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDemoConfig {
    pub grid_resolution: usize,
    /// Boundary-calibration weight of the calibrated WGAN run.
    pub lambda_bc: f64,
    /// Critic updates per generator update for the ACGAN run.
    pub acgan_critic_steps: usize,
    pub forest: Algorithm,
    /// Base settings shared by the three GAN runs.
    pub gan: GanConfig,
}

impl Default for ToyDemoConfig {
    fn default() -> Self {
        ToyDemoConfig {
            grid_resolution: 200,
            lambda_bc: 100.0,
            acgan_critic_steps: 1,
            forest: Algorithm::RandomForest {
                n_trees: 10,
                max_depth: 10,
            },
            gan: GanConfig::toy(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub gan: GanConfig,
    pub pretrain: PretrainConfig,
    pub evaluation: EvaluationConfig,
    pub toy_demo: ToyDemoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("bcgan-out"),
            dataset: DatasetConfig::default(),
            gan: GanConfig::default(),
            pretrain: PretrainConfig::default(),
            evaluation: EvaluationConfig::default(),
            toy_demo: ToyDemoConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<bcgan::gan::Variant>,
    pub lambda_bc: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| CliError::new(e.category, format!("{}: {}", p.display(), e.message)))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        if let Some(v) = overrides.variant {
            cfg.gan.variant = v;
        }
        if let Some(l) = overrides.lambda_bc {
            cfg.gan.lambda_bc = l;
        }
        cfg.gan.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text` layered over the defaults: any table, however deeply
    /// nested, keeps the default values of the keys it omits.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::new("format", e.to_string()))?;
        let mut merged = toml::Table::try_from(ExperimentConfig::default()).map_err(|e| CliError::new("format", e.to_string()))?;
        merge(&mut merged, user);
        merged.try_into().map_err(|e: toml::de::Error| CliError::new("format", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.gan.validate()?;
        if let DatasetConfig::Csv { train, test, .. } = &self.dataset {
            for p in [train, test] {
                if !p.exists() {
                    return Err(CliError::new("io", format!("dataset file {} does not exist", p.display())));
                }
            }
        }
        if self.evaluation.roster.is_empty() {
            return Err(CliError::new("argument", "evaluation roster is empty"));
        }
        Ok(())
    }

    /// Fully materialized TOML, suitable for `--config` on a rerun.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::new("format", e.to_string()))
    }

    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            DatasetConfig::Toy { kind, .. } => serde_json::to_value(kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            DatasetConfig::Csv { train, .. } => train.display().to_string(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !is_tagged(b, &o) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Tables selecting an enum variant replace the default wholesale when the
/// variant changes, so fields of the old variant do not leak in.
fn is_tagged(base: &toml::Table, over: &toml::Table) -> bool {
    ["source", "kind", "algorithm", "bandwidth"]
        .iter()
        .any(|t| matches!((base.get(*t), over.get(*t)), (Some(a), Some(b)) if a != b))
}
