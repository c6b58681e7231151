//! Run configuration: one TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corpus::Tokenization;
use crate::error::{Error, Result};
use crate::metrics::CostModel;
use crate::specdec::EngineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus file. When absent a synthetic corpus is generated from the run seed.
    pub corpus: Option<PathBuf>,
    pub synthetic_docs: usize,
    pub tokenization: Tokenization,
    pub test_fraction: f64,
    /// Number of held-out prompts to decode.
    pub prompts: usize,
    /// Leading tokens of each held-out document used as the prompt.
    pub prompt_tokens: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            synthetic_docs: 8000,
            tokenization: Tokenization::Whitespace,
            test_fraction: 0.1,
            prompts: 100,
            prompt_tokens: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub target_order: usize,
    pub target_k_add: f64,
    pub proxy_order: usize,
    pub proxy_k_add: f64,
    pub denoiser_order: usize,
    pub denoiser_k_add: f64,
    pub w_bi: f64,
    /// Pre-trained model files; when set they replace in-process training.
    pub target: Option<PathBuf>,
    pub proxy: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            target_order: 4,
            target_k_add: 0.01,
            proxy_order: 3,
            proxy_k_add: 0.1,
            denoiser_order: 3,
            denoiser_k_add: 0.1,
            w_bi: 0.5,
            target: None,
            proxy: None,
            denoiser: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Knob {
    /// Refinement rounds `S`.
    Steps,
    /// Beam width `B`.
    Beam,
    /// Lattice column cap `M_max`.
    MMax,
    /// Pruning mass `tau`.
    Tau,
    /// Fixed block size with the controller off, plus one controller row.
    FixedK,
}

impl Knob {
    pub fn name(self) -> &'static str {
        match self {
            Knob::Steps => "steps",
            Knob::Beam => "beam",
            Knob::MMax => "m-max",
            Knob::Tau => "tau",
            Knob::FixedK => "fixed-k",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Knob::Steps => vec![1.0, 2.0, 4.0, 8.0],
            Knob::Beam => vec![1.0, 2.0, 3.0, 5.0, 8.0],
            Knob::MMax => vec![1.0, 3.0, 5.0, 10.0, 15.0],
            Knob::Tau => vec![0.5, 0.7, 0.8, 0.9, 1.0],
            Knob::FixedK => vec![1.0, 2.0, 4.0, 6.0, 8.0, 12.0, 16.0, 20.0, 25.0, 30.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub knob: Knob,
    /// Empty means the knob's default grid.
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            knob: Knob::FixedK,
            values: Vec::new(),
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        if self.values.is_empty() {
            self.knob.default_values()
        } else {
            self.values.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub models: ModelConfig,
    pub engine: EngineConfig,
    pub cost: CostModel,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            models: ModelConfig::default(),
            engine: EngineConfig::default(),
            cost: CostModel::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.cost.validate()?;
        if self.data.prompt_tokens == 0 || self.data.prompts == 0 {
            return Err(Error::InvalidConfig("prompts and prompt_tokens must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::InvalidConfig("test_fraction must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.models.w_bi) {
            return Err(Error::InvalidConfig("w_bi must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// The resolved configuration as JSON with sorted keys.
    pub fn canonical_json(&self) -> Result<serde_json::Value> {
        // serde_json's default map is ordered, so a round trip sorts keys.
        serde_json::to_value(self).map_err(|e| Error::json("config", e))
    }

    /// SHA-256 of the canonical JSON, hex-encoded.
    pub fn hash(&self) -> Result<String> {
        let text = self.canonical_json()?.to_string();
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}
