use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::analysis::{ModelKind, ModelSettings, StratMethod, StudySettings};
use crate::dataset::SplitRatios;
use crate::metrics::DEFAULT_NRI_THRESHOLD;
use crate::synthetic::GeneratorSpec;

/// File locations. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub clinical: PathBuf,
    pub features: Option<PathBuf>,
    pub external_clinical: Option<PathBuf>,
    pub external_features: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default = "all_models")]
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub hyperparameters: ModelSettings,
    #[serde(default = "default_nri_threshold")]
    pub nri_threshold: f64,
    #[serde(default = "default_bootstrap")]
    pub n_bootstrap: usize,
    #[serde(default)]
    pub stratification: StratMethod,
    #[serde(default)]
    pub truncate_30d: bool,
    /// Synthetic development cohort written by `generate`.
    pub generator: Option<GeneratorSpec>,
    /// Synthetic external cohort written by `generate`.
    pub external_generator: Option<GeneratorSpec>,
}

fn all_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_nri_threshold() -> f64 {
    DEFAULT_NRI_THRESHOLD
}

fn default_bootstrap() -> usize {
    1000
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::InvalidConfig { field: field.to_string(), reason: reason.into() }
}

impl StudyConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: StudyConfig = toml::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        join(&mut paths.clinical);
        join(&mut paths.output);
        for p in [&mut paths.features, &mut paths.external_clinical, &mut paths.external_features].into_iter().flatten() {
            join(p);
        }
    }

    /// Structural checks that need no files.
    pub fn validate(&self) -> Result<(), CliError> {
        self.split.validate().map_err(|e| invalid("split", e.to_string()))?;
        if self.models.is_empty() {
            return Err(invalid("models", "at least one model is required"));
        }
        if !(self.nri_threshold > 0.0 && self.nri_threshold < 1.0) {
            return Err(invalid("nri_threshold", format!("{} is not inside (0, 1)", self.nri_threshold)));
        }
        if self.n_bootstrap < crate::metrics::MIN_RESAMPLES {
            return Err(invalid("n_bootstrap", format!("at least {} resamples required", crate::metrics::MIN_RESAMPLES)));
        }
        if let StratMethod::FixedThreshold { threshold } = self.stratification {
            if !threshold.is_finite() {
                return Err(invalid("stratification.threshold", "must be finite"));
            }
        }
        let h = &self.hyperparameters;
        h.deep_clinical.validate().map_err(|e| invalid("hyperparameters.deep_clinical", e.to_string()))?;
        h.deep_imaging.validate().map_err(|e| invalid("hyperparameters.deep_imaging", e.to_string()))?;
        if h.rsf.n_trees == 0 {
            return Err(invalid("hyperparameters.rsf.n_trees", "must be at least 1"));
        }
        if h.rsf.min_leaf_size == 0 {
            return Err(invalid("hyperparameters.rsf.min_leaf_size", "must be at least 1"));
        }
        if self.paths.external_features.is_some() && self.paths.external_clinical.is_none() {
            return Err(invalid("paths.external_features", "given without paths.external_clinical"));
        }
        for (field, spec) in [("generator", &self.generator), ("external_generator", &self.external_generator)] {
            if let Some(spec) = spec {
                spec.validate().map_err(|e| invalid(field, e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn needs_imaging(&self) -> bool {
        self.models.iter().any(|m| m.needs_imaging())
    }

    pub fn study_settings(&self) -> StudySettings {
        StudySettings {
            seed: self.seed,
            ratios: self.split,
            models: self.models.clone(),
            hyperparameters: self.hyperparameters.clone(),
            nri_threshold: self.nri_threshold,
            n_bootstrap: self.n_bootstrap,
            stratification: self.stratification,
            truncate_30d: self.truncate_30d,
        }
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the effective study settings and the input file contents.
/// Paths are left out so relocating a study keeps its fingerprint.
pub fn config_fingerprint(settings: &StudySettings, data_fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(settings).expect("settings serialize"));
    h.update(data_fingerprint.as_bytes());
    hex::encode(h.finalize())
}
