//! Run configuration, read from TOML. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cape::ChannelId;
use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::evalsuite::ProbeConfig;
use crate::model::ModelConfig;
use crate::prompting::{default_single_prompts, DEFAULT_K};
use crate::synthdata::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 2e-3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
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
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Synthetic reports averaged per label prototype.
    pub k: usize,
    pub seed: u64,
    /// Single-sentence baseline prompt per label value.
    pub single: BTreeMap<String, String>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            single: default_single_prompts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub retrieval_k: Vec<usize>,
    /// Drop a query's own paired report from its retrieval candidates.
    pub exclude_self: bool,
    /// Seeds of the multi-seed protocol (ablations).
    pub seeds: Vec<u64>,
    /// Channels removed for the shifted-montage benchmark.
    pub shift_remove: Vec<String>,
    pub shift_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            retrieval_k: vec![1, 5, 10, 100],
            exclude_self: false,
            seeds: vec![0, 1, 2, 3, 4],
            shift_remove: ["F4", "FZ", "O1", "P3", "T3"].iter().map(|s| s.to_string()).collect(),
            shift_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            out: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prompts: PromptConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Checks every module precondition that can be checked before compute.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.data.validate().map_err(cfg)?;
        self.model.validate().map_err(cfg)?;
        if !self.data.samples.is_multiple_of(self.model.patch_len) {
            return Err(Error::config(format!(
                "data.samples = {} is not divisible by model.patch_len = {}",
                self.data.samples, self.model.patch_len
            )));
        }
        let channels = self.data.channels.len();
        if self.model.dcp && self.model.removal().max_removed(channels) < 1 && self.model.p_remove > 0.0 {
            return Err(Error::config(format!(
                "r_max = {} cannot remove any of {channels} channels",
                self.model.r_max
            )));
        }
        if !self.model.cape && channels > self.model.max_positions {
            return Err(Error::config(format!(
                "{channels} channels exceed model.max_positions = {}",
                self.model.max_positions
            )));
        }
        if self.train.batch_size < 2 {
            return Err(Error::config("train.batch_size must be at least 2"));
        }
        if !(self.train.learning_rate > 0.0) || !(self.train.eps > 0.0) {
            return Err(Error::config("learning_rate and eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.train.beta1) || !(0.0..1.0).contains(&self.train.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if self.prompts.k < 1 {
            return Err(Error::config("prompts.k must be at least 1"));
        }
        for task in crate::synthdata::Task::ALL {
            for class in task.classes() {
                if !self.prompts.single.contains_key(class) {
                    return Err(Error::config(format!("prompts.single lacks label `{class}`")));
                }
            }
        }
        if self.eval.retrieval_k.contains(&0) {
            return Err(Error::config("retrieval K values must be positive"));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::config("eval.seeds must not be empty"));
        }
        for name in &self.eval.shift_remove {
            let id: ChannelId = name.parse().map_err(cfg)?;
            if !self
                .data
                .channels
                .iter()
                .any(|c| c.eq_ignore_ascii_case(&id.to_string()))
            {
                return Err(Error::config(format!("shift channel {name} is not in the montage")));
            }
        }
        if self.eval.shift_remove.len() + 1 > channels {
            return Err(Error::config("the shifted montage must keep at least one channel"));
        }
        if self.eval.probe.epochs == 0 || !(self.eval.probe.learning_rate > 0.0) {
            return Err(Error::config("probe epochs and learning rate must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn dotted_keys_and_unknown_keys() {
        let cfg = RunConfig::from_toml_str("train.epochs = 3\nmodel.lambda = 0.25\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.lambda, 0.25);
        assert!(matches!(
            RunConfig::from_toml_str("train.epoch = 3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn preconditions_rejected_up_front() {
        for bad in [
            "model.p_remove = 1.5",
            "model.dcp = false",
            "data.samples = 250",
            "train.batch_size = 1",
            "prompts.k = 0",
            "eval.shift_remove = [\"XX\"]",
        ] {
            assert!(matches!(RunConfig::from_toml_str(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
