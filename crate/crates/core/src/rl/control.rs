//! Action selection strategies sharing one interface: the learned agent,
//! the uniform behavior policy, and the drift-plus-penalty baseline.

use serde::{Deserialize, Serialize};

use super::ppo::Agent;
use crate::env::{CmdpState, StepOutcome};
use crate::genmodel::VirtualCmdp;
use crate::rng::SeededRng;

pub trait Controller {
    /// Called at the start of every episode.
    fn reset(&mut self) {}
    fn act(&mut self, s: &CmdpState, rng: &mut SeededRng) -> Vec<f64>;
    /// Sees the outcome of the action just taken.
    fn observe(&mut self, _out: &StepOutcome) {}
}

/// I.i.d. uniform draws on the open box `(-1, 1)^dim`.
pub fn behavior_policy_uniform(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform_open(-1.0, 1.0)).collect()
}

pub struct UniformController {
    pub dim: usize,
}

impl Controller for UniformController {
    fn act(&mut self, _s: &CmdpState, rng: &mut SeededRng) -> Vec<f64> {
        behavior_policy_uniform(self.dim, rng)
    }
}

/// Runs a trained agent, sampling or taking `tanh(mean)`.
pub struct AgentController<'a> {
    pub agent: &'a Agent,
    pub deterministic: bool,
}

impl Controller for AgentController<'_> {
    fn act(&mut self, s: &CmdpState, rng: &mut SeededRng) -> Vec<f64> {
        let obs = self.agent.observe(s);
        if self.deterministic {
            self.agent.act_deterministic(&obs)
        } else {
            self.agent.act(&obs, rng).action
        }
    }
}

/// Predicts `(reward, cost)` for a state-action pair.
pub trait RewardCostModel {
    fn predict(&self, s: &CmdpState, action: &[f64]) -> (f64, f64);
}

impl RewardCostModel for VirtualCmdp {
    fn predict(&self, s: &CmdpState, action: &[f64]) -> (f64, f64) {
        self.predict_reward_cost(s, action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapunovConfig {
    pub candidates: usize,
    /// Weight on the virtual-queue penalty.
    pub v_w: f64,
    pub cost_threshold: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            candidates: 200,
            v_w: 10.0,
            cost_threshold: 0.005,
        }
    }
}

/// Index of the candidate minimizing `-r + V_w Z (c - d)`; ties go to the
/// lowest index.
pub fn lyapunov_select(scores: &[(f64, f64)], z: f64, cfg: &LyapunovConfig) -> usize {
    let mut best = 0;
    let mut best_obj = f64::INFINITY;
    for (i, &(r, c)) in scores.iter().enumerate() {
        let obj = -r + cfg.v_w * z * (c - cfg.cost_threshold);
        if obj < best_obj {
            best_obj = obj;
            best = i;
        }
    }
    best
}

/// `Z' = max(Z + c - d, 0)`.
pub fn lyapunov_queue_update(z: f64, cost: f64, threshold: f64) -> f64 {
    (z + cost - threshold).max(0.0)
}

/// One baseline decision: draws candidates, scores them with the model and
/// returns the chosen action.
pub fn lyapunov_baseline<M: RewardCostModel + ?Sized>(
    s: &CmdpState,
    model: &M,
    z: f64,
    action_dim: usize,
    cfg: &LyapunovConfig,
    rng: &mut SeededRng,
) -> Vec<f64> {
    let cands: Vec<Vec<f64>> = (0..cfg.candidates.max(1))
        .map(|_| behavior_policy_uniform(action_dim, rng))
        .collect();
    let scores: Vec<(f64, f64)> = cands.iter().map(|a| model.predict(s, a)).collect();
    let i = lyapunov_select(&scores, z, cfg);
    cands.into_iter().nth(i).expect("non-empty candidates")
}

pub struct LyapunovController<'a, M: RewardCostModel + ?Sized> {
    pub model: &'a M,
    pub cfg: LyapunovConfig,
    pub action_dim: usize,
    pub z: f64,
}

impl<'a, M: RewardCostModel + ?Sized> LyapunovController<'a, M> {
    pub fn new(model: &'a M, action_dim: usize, cfg: LyapunovConfig) -> Self {
        Self {
            model,
            cfg,
            action_dim,
            z: 0.0,
        }
    }
}

impl<M: RewardCostModel + ?Sized> Controller for LyapunovController<'_, M> {
    fn reset(&mut self) {
        self.z = 0.0;
    }

    fn act(&mut self, s: &CmdpState, rng: &mut SeededRng) -> Vec<f64> {
        lyapunov_baseline(s, self.model, self.z, self.action_dim, &self.cfg, rng)
    }

    fn observe(&mut self, out: &StepOutcome) {
        self.z = lyapunov_queue_update(self.z, out.cost_agg, self.cfg.cost_threshold);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_moments_and_range() {
        let mut rng = SeededRng::new(3, 0);
        let n = 100_000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let a = behavior_policy_uniform(3, &mut rng);
            for (s, v) in sum.iter_mut().zip(&a) {
                assert!(v.abs() < 1.0);
                *s += v;
            }
        }
        for s in sum {
            assert!((s / n as f64).abs() < 0.01);
        }
        let a = behavior_policy_uniform(4, &mut SeededRng::new(9, 1));
        let b = behavior_policy_uniform(4, &mut SeededRng::new(9, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_queue_is_greedy() {
        let cfg = LyapunovConfig::default();
        let scores = [(1.0, 0.9), (3.0, 1.0), (2.0, 0.0)];
        assert_eq!(lyapunov_select(&scores, 0.0, &cfg), 1);
    }

    #[test]
    fn queue_penalizes_cost() {
        let cfg = LyapunovConfig::default();
        let scores = [(1.0, 0.2), (1.0, 0.0)];
        assert_eq!(lyapunov_select(&scores, 0.5, &cfg), 1);
        // exact ties keep the first candidate
        assert_eq!(lyapunov_select(&[(1.0, 0.0), (1.0, 0.0)], 0.5, &cfg), 0);
    }

    #[test]
    fn queue_update_arithmetic() {
        assert!((lyapunov_queue_update(1.0, 0.01, 0.005) - 1.005).abs() < 1e-15);
        assert_eq!(lyapunov_queue_update(0.0, 0.0, 0.005), 0.0);
    }
}
