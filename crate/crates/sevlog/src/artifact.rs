//! Persistent model artifacts.
//!
//! An artifact is a directory holding `config.json` (configuration, stage,
//! optional decision threshold, format version), `vocab.json` (token to
//! index), `params.manifest` (named tensor layout) and `params.bin`
//! (row-major little-endian f32 payloads). Loading and re-saving reproduces
//! `params.bin` byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::DecisionThreshold;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, PretrainedModel};
use crate::preprocess::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;

const CONFIG_FILE: &str = "config.json";
const VOCAB_FILE: &str = "vocab.json";
const MANIFEST_FILE: &str = "params.manifest";
const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrained,
    Finetuned,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    format_version: u32,
    stage: Stage,
    model: ModelConfig,
    threshold: Option<DecisionThreshold>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into params.bin.
    offset: usize,
    /// Number of f32 values.
    len: usize,
}

/// A trained model package on disk.
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub config: ModelConfig,
    pub stage: Stage,
    pub threshold: Option<DecisionThreshold>,
}

impl ModelArtifact {
    pub fn pretrained(model: &PretrainedModel) -> Self {
        ModelArtifact {
            params: model.params.clone(),
            vocab: model.vocab.clone(),
            config: model.config.clone(),
            stage: Stage::Pretrained,
            threshold: None,
        }
    }

    pub fn as_pretrained_model(&self) -> PretrainedModel {
        PretrainedModel {
            params: self.params.clone(),
            vocab: self.vocab.clone(),
            config: self.config.clone(),
        }
    }

    /// The decision threshold, or an actionable error for artifacts that
    /// never completed finetuning.
    pub fn require_threshold(&self) -> Result<DecisionThreshold> {
        self.threshold.ok_or_else(|| {
            Error::artifact(
                "artifact has no threshold: run finetune before detect/evaluate".to_string(),
            )
        })
    }

    fn validate(&self) -> Result<()> {
        match (self.stage, self.threshold.is_some()) {
            (Stage::Finetuned, false) => {
                Err(Error::artifact("finetuned artifact is missing its threshold"))
            }
            (Stage::Pretrained, true) => {
                Err(Error::artifact("pretrained artifact must not carry a threshold"))
            }
            _ => Ok(()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;

        let config = ConfigFile {
            format_version: FORMAT_VERSION,
            stage: self.stage,
            model: self.config.clone(),
            threshold: self.threshold,
        };
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&config)?)?;

        let vocab_map: BTreeMap<String, usize> = self.vocab.to_sorted_map();
        fs::write(dir.join(VOCAB_FILE), serde_json::to_string_pretty(&vocab_map)?)?;

        let mut manifest = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for (name, tensor) in self.params.visit() {
            let values = tensor.as_slice();
            manifest.push(ManifestEntry {
                name,
                shape: tensor.shape(),
                offset: payload.len(),
                len: values.len(),
            });
            for &v in values {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        fs::write(dir.join(PARAMS_FILE), payload)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config_text = fs::read_to_string(dir.join(CONFIG_FILE)).map_err(|e| {
            Error::artifact(format!("cannot read {} in {}: {e}", CONFIG_FILE, dir.display()))
        })?;
        let config: ConfigFile = serde_json::from_str(&config_text)?;
        if config.format_version != FORMAT_VERSION {
            return Err(Error::artifact(format!(
                "unsupported artifact format version {} (expected {})",
                config.format_version, FORMAT_VERSION
            )));
        }

        let vocab_text = fs::read_to_string(dir.join(VOCAB_FILE))?;
        let vocab_map: BTreeMap<String, usize> = serde_json::from_str(&vocab_text)?;
        let vocab = Vocabulary::from_map(vocab_map)?;

        let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Vec<ManifestEntry> = serde_json::from_str(&manifest_text)?;
        let payload = fs::read(dir.join(PARAMS_FILE))?;

        let mut seed_rng = rand::SeedableRng::seed_from_u64(0);
        let mut params = ModelParams::init(&config.model, vocab.size(), &mut seed_rng);
        let mut tensors = params.visit_mut();
        if tensors.len() != manifest.len() {
            return Err(Error::artifact(format!(
                "manifest holds {} tensors, model expects {}",
                manifest.len(),
                tensors.len()
            )));
        }
        for (entry, (name, tensor)) in manifest.iter().zip(tensors.iter_mut()) {
            if &entry.name != name {
                return Err(Error::artifact(format!(
                    "manifest tensor {} does not match expected {}",
                    entry.name, name
                )));
            }
            let values = tensor.as_slice_mut();
            if entry.len != values.len() {
                return Err(Error::artifact(format!(
                    "tensor {} holds {} values, expected {}",
                    entry.name,
                    entry.len,
                    values.len()
                )));
            }
            let end = entry.offset + 4 * entry.len;
            if end > payload.len() {
                return Err(Error::artifact(format!("params.bin truncated at tensor {}", entry.name)));
            }
            for (i, v) in values.iter_mut().enumerate() {
                let at = entry.offset + 4 * i;
                let bytes: [u8; 4] = payload[at..at + 4].try_into().unwrap();
                *v = f32::from_le_bytes(bytes) as f64;
            }
        }
        drop(tensors);

        let artifact = ModelArtifact {
            params,
            vocab,
            config: config.model,
            stage: config.stage,
            threshold: config.threshold,
        };
        artifact.validate()?;
        Ok(artifact)
    }
}
