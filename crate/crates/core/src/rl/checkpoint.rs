use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::{ObsNormalizer, Policy, PolicySpec};
use super::ppo::{Agent, DualState, PpoConfig};
use crate::error::{Error, Result};
use crate::nn::{Mlp, ParamVector};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume acting or fine-tuning. Optimizer moments
/// are not stored, so a restored agent starts with fresh Adam state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub env_hash: Option<String>,
    pub episode: usize,
    pub spec: PolicySpec,
    pub obs: ObsNormalizer,
    pub policy_params: ParamVector,
    pub critic_params: ParamVector,
    pub lambda: f64,
    pub ppo: PpoConfig,
}

impl PolicyCheckpoint {
    pub fn from_agent(agent: &Agent, env_hash: Option<String>, episode: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            env_hash,
            episode,
            spec: agent.policy.spec.clone(),
            obs: agent.obs.clone(),
            policy_params: ParamVector::flat(agent.policy_params.clone()),
            critic_params: ParamVector::flat(agent.critic_params.clone()),
            lambda: agent.dual.lambda,
            ppo: agent.cfg.clone(),
        }
    }

    /// Rebuilds an agent; `cfg` overrides the stored training settings
    /// except for the network shape.
    pub fn to_agent(&self, cfg: Option<PpoConfig>) -> Result<Agent> {
        let mut cfg = cfg.unwrap_or_else(|| self.ppo.clone());
        cfg.hidden = self.spec.hidden.clone();
        cfg.init_log_std = self.spec.init_log_std;
        let policy = Policy::new(self.spec.clone())?;
        let critic = Mlp::new(self.spec.critic())?;
        Agent::from_parts(
            cfg,
            policy,
            critic,
            self.obs.clone(),
            self.policy_params.values.clone(),
            self.critic_params.values.clone(),
            Some(DualState { lambda: self.lambda }),
        )
    }

    pub fn check_env(&self, hash: &str) -> Result<()> {
        match &self.env_hash {
            Some(h) if h != hash => Err(Error::HashMismatch {
                artifact: h.clone(),
                config: hash.to_string(),
            }),
            _ => Ok(()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", c.version)));
        }
        c.policy_params.validate()?;
        c.critic_params.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn round_trip() {
        let cfg = PpoConfig {
            hidden: vec![6],
            ..PpoConfig::default()
        };
        let agent = Agent::new(3, 2, ObsNormalizer::identity(3), cfg, &mut SeededRng::new(1, 0)).unwrap();
        let ck = PolicyCheckpoint::from_agent(&agent, Some("abc".into()), 150);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.json");
        ck.save(&p).unwrap();
        let back = PolicyCheckpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let a2 = back.to_agent(None).unwrap();
        assert_eq!(a2.policy_params, agent.policy_params);
        assert!(back.check_env("abc").is_ok());
        assert!(back.check_env("abd").is_err());
    }
}
