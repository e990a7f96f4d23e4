//! Run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DataError, SystemProfile, SystemSet};
use crate::ensemble::{ConstantQe, FileQe, OracleQe, QeError, QualityEstimator, RescoreMode, DEFAULT_THRESHOLD};
use crate::datamodel::Dataset;
use crate::features::GroupToggles;
use crate::gbm::Hyperparams;
use crate::hpo::{Budget, Objective, SearchSpace};
use crate::labeling::{Weighting, DEFAULT_WEIGHT_FLOOR};
use crate::pipeline::{standard_combos, AblationCombo, Overhead};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "ASR_ROUTER_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unknown pivot '{0}'")]
    UnknownPivot(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Systems(#[from] DataError),
}

/// Where QE scores for rescoring come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QeSource {
    File { path: PathBuf },
    Constant { value: f64 },
    /// Negative true WER; needs references. For experiments only.
    Oracle,
}

impl QeSource {
    pub fn build(&self, ds: &Dataset) -> Result<Box<dyn QualityEstimator>, QeError> {
        Ok(match self {
            QeSource::File { path } => Box::new(FileQe::load(path)?),
            QeSource::Constant { value } => Box::new(ConstantQe(*value)),
            QeSource::Oracle => Box::new(OracleQe::from_dataset(ds)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoSettings {
    pub enabled: bool,
    pub budget: Budget,
    pub folds: usize,
    pub objective: Objective,
    pub space: SearchSpace,
}

impl Default for HpoSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            budget: Budget::Trials(20),
            folds: 5,
            objective: Objective::Ensemble,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub systems: Vec<SystemProfile>,
    /// Overrides the `is_pivot` flags of `systems`.
    pub pivot: Option<String>,
    pub features: GroupToggles,
    pub sample_weights: bool,
    pub weight_floor: f64,
    pub rescoring: RescoreMode,
    pub qe: Option<QeSource>,
    pub rescore_overhead: Overhead,
    pub threshold: f64,
    pub hyperparams: Hyperparams,
    pub hpo: HpoSettings,
    /// Train / validation / test ratios.
    pub split: [f64; 3],
    pub ablation: Vec<AblationCombo>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            model: None,
            output_dir: PathBuf::from("out"),
            systems: Vec::new(),
            pivot: None,
            features: GroupToggles::default(),
            sample_weights: true,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            rescoring: RescoreMode::Off,
            qe: None,
            rescore_overhead: Overhead::default(),
            threshold: DEFAULT_THRESHOLD,
            hyperparams: Hyperparams::default(),
            hpo: HpoSettings::default(),
            split: [0.8, 0.1, 0.1],
            ablation: standard_combos(true),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(path: &Path, text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                ConfigError::MissingFile(path.to_path_buf())
            } else {
                ConfigError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })?;
        Self::from_json(path, &text)
    }

    pub fn weighting(&self) -> Weighting {
        if self.sample_weights {
            Weighting::WerDiffInverseFreq {
                floor: self.weight_floor,
            }
        } else {
            Weighting::Uniform
        }
    }

    /// Profiles with the pivot override applied and validated.
    pub fn system_set(&self) -> Result<SystemSet, ConfigError> {
        let mut profiles = self.systems.clone();
        if let Some(p) = &self.pivot {
            if !profiles.iter().any(|s| &s.id == p) {
                return Err(ConfigError::UnknownPivot(p.clone()));
            }
            for s in &mut profiles {
                s.is_pivot = &s.id == p;
            }
        }
        Ok(SystemSet::new(profiles)?)
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<SystemSet, ConfigError> {
        let systems = self.system_set()?;
        for path in self.dataset.iter().chain(match &self.qe {
            Some(QeSource::File { path }) => Some(path),
            _ => None,
        }) {
            if !path.exists() {
                return Err(ConfigError::MissingFile(path.clone()));
            }
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(ConfigError::Invalid("threshold must be in [0, 1)".into()));
        }
        if !(self.weight_floor.is_finite() && self.weight_floor >= 0.0) {
            return Err(ConfigError::Invalid("weight_floor must be >= 0".into()));
        }
        self.hyperparams
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.rescoring != RescoreMode::Off && self.qe.is_none() {
            return Err(ConfigError::Invalid("rescoring needs a qe source".into()));
        }
        Ok(systems)
    }
}
