use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Protocol;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::point_process::PointProcessConfig;
use crate::position::PositionConfig;
use crate::time_encoding::TimeEncodingConfig;

/// Components replaced by simpler stand-ins.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Feed zero vectors instead of the time encoding.
    pub time_encoding: bool,
    /// Score with one position-agnostic logit head.
    pub position_module: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Look-up width of every raw id feature.
    pub embedding_dim: usize,
    /// Output width of the user, context and position-feature projections.
    pub feature_dim: usize,
    /// Output width of the item projection (item id ‖ category id).
    pub item_dim: usize,
    pub mlp: Vec<usize>,
    pub attention_dim: usize,
    pub max_history: usize,
    pub time_encoding: TimeEncodingConfig,
    pub point_process: PointProcessConfig,
    pub position: PositionConfig,
    /// Starting value of the scalar added to every position logit.
    pub logit_offset_init: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 8,
            feature_dim: 8,
            item_dim: 16,
            mlp: vec![256, 128, 64],
            attention_dim: 32,
            max_history: 50,
            time_encoding: TimeEncodingConfig::default(),
            point_process: PointProcessConfig::default(),
            position: PositionConfig::default(),
            logit_offset_init: -4.0,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embedding_dim,
            self.feature_dim,
            self.item_dim,
            self.attention_dim,
            self.max_history,
        ];
        if dims.contains(&0) || self.mlp.is_empty() || self.mlp.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        self.time_encoding.validate()?;
        self.point_process.validate()?;
        if self.position.experts == 0 || self.position.expert_width == 0 {
            return Err(Error::Config("position module needs experts".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sampled negative items per positive for the temporal term.
    pub negatives: usize,
    /// Weight of the temporal log-likelihood.
    pub alpha: f64,
    /// L2 coefficient on all parameters.
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 20,
            batch_size: 256,
            negatives: 5,
            alpha: 1.0,
            l2: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning_rate and batch_size must be positive".into()));
        }
        if !(self.alpha >= 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config("alpha and l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything `train` reads from its configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub protocol: Protocol,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
