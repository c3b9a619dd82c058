use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::genmodel::{FitConfig, HalfMoonsConfig};
use crate::rl::{LyapunovConfig, PpoConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub tuples: usize,
    /// Slots per collection episode; shorter episodes give more initial states.
    pub episode_len: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            tuples: 8000,
            episode_len: 20,
        }
    }
}

/// Every tunable of the five-phase pipeline in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Seed for collection, fitting, pretraining and the toy benchmark.
    pub seed: u64,
    /// Seeds of the multi-seed fine-tuning and evaluation runs.
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub collect: CollectConfig,
    pub fit: FitConfig,
    pub ppo: PpoConfig,
    pub pretrain_episodes: usize,
    pub finetune_episodes: usize,
    pub checkpoint_every: usize,
    /// Real-environment episodes used to score each pretraining checkpoint.
    pub snapshot_eval_episodes: usize,
    pub eval_episodes: usize,
    pub lyapunov: LyapunovConfig,
    pub halfmoons: HalfMoonsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            env: EnvConfig::desk(),
            collect: CollectConfig::default(),
            fit: FitConfig::default(),
            ppo: PpoConfig {
                reward_scale: 1e-7,
                ..PpoConfig::default()
            },
            pretrain_episodes: 300,
            finetune_episodes: 400,
            checkpoint_every: 150,
            snapshot_eval_episodes: 10,
            eval_episodes: 100,
            lyapunov: LyapunovConfig::default(),
            halfmoons: HalfMoonsConfig::default(),
        }
    }

    /// Full-size system; fitting and training take hours.
    pub fn full() -> Self {
        Self {
            env: EnvConfig::full(),
            collect: CollectConfig {
                tuples: 30_000,
                episode_len: 20,
            },
            pretrain_episodes: 1500,
            finetune_episodes: 1200,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.env.validate()?;
        self.ppo.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.collect.tuples == 0 || self.collect.episode_len == 0 {
            return Err(Error::Config(
                "collect.tuples and collect.episode_len must be >= 1".into(),
            ));
        }
        if self.checkpoint_every == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("checkpoint_every and eval_episodes must be >= 1".into()));
        }
        if self.lyapunov.candidates == 0 {
            return Err(Error::Config("lyapunov.candidates must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses and validates; every failure is a configuration error.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn env_hash(&self) -> String {
        self.env.hash()
    }
}
