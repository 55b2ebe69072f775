use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::analysis::{FittedPipeline, ModelKind};
use crate::dataset::clinical_feature_names;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub seed: u64,
    /// SHA-256 over the input files the model was fitted on.
    pub data_fingerprint: String,
    /// Imaging feature count, zero for clinical-only models.
    pub feature_dim: usize,
}

/// A fitted model saved as JSON. `model_kind` stays a string on disk so an
/// unrecognised kind is reported as such instead of a parse failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub model_kind: String,
    pub feature_names: Vec<String>,
    pub pipeline: FittedPipeline,
    pub metadata: FitMetadata,
}

pub fn feature_names(kind: ModelKind, feature_dim: usize) -> Vec<String> {
    let mut names = clinical_feature_names();
    if kind.needs_imaging() {
        names.extend((0..feature_dim).map(|k| format!("f{k}")));
    }
    names
}

impl ModelArtifact {
    pub fn new(kind: ModelKind, pipeline: &FittedPipeline, seed: u64, data_fingerprint: &str, feature_dim: usize) -> Self {
        let feature_dim = if kind.needs_imaging() { feature_dim } else { 0 };
        Self {
            schema_version: SCHEMA_VERSION,
            model_kind: kind.as_str().to_string(),
            feature_names: feature_names(kind, feature_dim),
            pipeline: pipeline.restricted_to(kind),
            metadata: FitMetadata { seed, data_fingerprint: data_fingerprint.to_string(), feature_dim },
        }
    }

    pub fn kind(&self) -> Result<ModelKind, CliError> {
        self.model_kind.parse().map_err(|_| CliError::UnknownModelKind(self.model_kind.clone()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::InvalidArtifact(e.to_string()))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(SCHEMA_VERSION)) {
            return Err(CliError::InvalidArtifact(format!("unsupported schema_version {version:?}")));
        }
        if let Some(kind) = value.get("model_kind").and_then(|v| v.as_str()) {
            kind.parse::<ModelKind>().map_err(|_| CliError::UnknownModelKind(kind.to_string()))?;
        }
        serde_json::from_value(value).map_err(|e| CliError::InvalidArtifact(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
