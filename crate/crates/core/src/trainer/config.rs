use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::AgentConfig;
use crate::embeddings::TransEConfig;
use crate::error::{Error, Result};
use crate::extractors::{ExtractorConfig, LossConfig};
use crate::rl::{PpoConfig, RewardConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Consensus re-labeling with curriculum-queued PPO updates.
    Curriculum,
    /// Consensus re-labeling; every evaluation goes straight to PPO.
    Joint,
    /// No consensus: each agent's own confidence, thresholded at 0.5,
    /// decides the labels of its view.
    Separate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Curriculum => "curriculum",
            Self::Joint => "joint",
            Self::Separate => "separate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub extractor_epochs: usize,
    /// Peak extractor learning rate during pre-training; re-training uses
    /// `loss.lr_max`.
    pub extractor_lr_max: f64,
    pub policy_epochs: usize,
    pub policy_lr: f64,
    /// Synthetic corrupted-type negatives per validation positive.
    pub negatives_per_positive: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            extractor_epochs: 20,
            extractor_lr_max: 0.3,
            policy_epochs: 30,
            policy_lr: 1.0,
            negatives_per_positive: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueConfig {
    pub capacity: usize,
    /// Rewards above this train immediately. The default equals the largest
    /// reward possible at the default `reward.alpha`, so every evaluation
    /// waits in the queue and training is driven by overflow, highest reward
    /// first. Lower values let easy items jump the queue; in practice that
    /// trains agents on a reward-biased subset and they drift towards None.
    pub threshold: f64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            capacity: 256,
            threshold: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: Mode,
    pub validation_fraction: f64,
    /// Restore both extractors from their pre-trained state every epoch.
    pub reset_extractors_each_epoch: bool,
    pub extractor: ExtractorConfig,
    pub loss: LossConfig,
    pub pretrain: PretrainConfig,
    pub agents: AgentConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub queue: QueueConfig,
    pub transe: TransEConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 10,
            batch_size: 64,
            mode: Mode::Curriculum,
            validation_fraction: 0.2,
            reset_extractors_each_epoch: true,
            extractor: ExtractorConfig::default(),
            loss: LossConfig::default(),
            pretrain: PretrainConfig::default(),
            agents: AgentConfig::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            queue: QueueConfig::default(),
            transe: TransEConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 1.0) {
            return Err(Error::Config("validation_fraction must be in (0, 1]".into()));
        }
        if self.queue.capacity == 0 {
            return Err(Error::Config("queue capacity must be positive".into()));
        }
        if self.extractor.hidden > self.extractor.features.d_s {
            return Err(Error::Config(format!(
                "type vectors ({}) must not be wider than sentence vectors ({})",
                self.extractor.hidden, self.extractor.features.d_s
            )));
        }
        self.loss.validate()?;
        if !(self.pretrain.extractor_lr_max >= self.loss.lr_min && self.pretrain.extractor_lr_max.is_finite()) {
            return Err(Error::Config(
                "pretrain.extractor_lr_max must be finite and >= loss.lr_min".into(),
            ));
        }
        if !(self.pretrain.policy_lr > 0.0 && self.pretrain.policy_lr.is_finite()) {
            return Err(Error::Config("pretrain.policy_lr must be positive".into()));
        }
        self.agents.policy.validate()?;
        self.reward.validate()?;
        self.ppo.validate()
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
