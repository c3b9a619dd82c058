//! PPO with a clipped surrogate and a Lagrangian cost penalty.

use serde::{Deserialize, Serialize};

use super::policy::{ActSample, ObsNormalizer, Policy, PolicySpec};
use crate::env::CmdpState;
use crate::error::{Error, Result};
use crate::nn::adam::clip_grad_norm;
use crate::nn::{Adam, AdamConfig, Differentiable, Mlp};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    /// Passes over each rollout batch.
    pub epochs: usize,
    pub minibatch: usize,
    /// Episodes collected per update.
    pub rollout_episodes: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub dual_lr: f64,
    pub lambda0: f64,
    pub cost_threshold: f64,
    /// Multiplies raw rewards before advantage estimation.
    pub reward_scale: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Evaluate with `tanh(mean)` instead of sampling.
    pub deterministic_eval: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 10,
            minibatch: 64,
            rollout_episodes: 1,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            dual_lr: 0.1,
            lambda0: 30.0,
            cost_threshold: 0.005,
            reward_scale: 1.0,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            init_log_std: -0.5,
            deterministic_eval: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout_episodes == 0 {
            return bad("epochs, minibatch and rollout_episodes must be >= 1");
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0 && self.dual_lr >= 0.0) {
            return bad("learning rates must be positive");
        }
        if self.lambda0 < 0.0 || self.cost_threshold < 0.0 {
            return bad("lambda0 and cost_threshold must be non-negative");
        }
        if !(self.reward_scale > 0.0 && self.max_grad_norm > 0.0) {
            return bad("reward_scale and max_grad_norm must be positive");
        }
        Ok(())
    }
}

/// Non-negative Lagrange multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
}

/// Projected ascent `lambda <- max(lambda + lr (cost - d), 0)`.
pub fn dual_update(dual: DualState, cost_mean: f64, lr: f64, threshold: f64) -> DualState {
    DualState {
        lambda: (dual.lambda + lr * (cost_mean - threshold)).max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub pre: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub cost: f64,
    pub v_r: f64,
    pub v_c: f64,
    pub done: bool,
}

/// Episode-aligned rollout storage.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    capacity: usize,
    pub steps: Vec<Transition>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            steps: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if self.steps.len() >= self.capacity {
            return Err(Error::InvalidArgument("rollout buffer full".into()));
        }
        self.steps.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }
}

/// Backward GAE recursion; `done[t]` cuts the bootstrap from `t + 1`.
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(rewards: &[f64], values: &[f64], done: &[bool], gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let terminal = done[t] || t + 1 == n;
        let next_v = if terminal { 0.0 } else { values[t + 1] };
        let carry = if terminal { 0.0 } else { next_adv };
        let delta = rewards[t] + gamma * next_v - values[t];
        adv[t] = delta + gamma * lam * carry;
        next_adv = adv[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
    pub ret_reward: Vec<f64>,
    pub ret_cost: Vec<f64>,
}

pub fn buffer_gae(buf: &RolloutBuffer, gamma: f64, lam: f64) -> Advantages {
    let col = |f: fn(&Transition) -> f64| buf.steps.iter().map(f).collect::<Vec<_>>();
    let done: Vec<bool> = buf.steps.iter().map(|t| t.done).collect();
    let (reward, ret_reward) = gae(&col(|t| t.reward), &col(|t| t.v_r), &done, gamma, lam);
    let (cost, ret_cost) = gae(&col(|t| t.cost), &col(|t| t.v_c), &done, gamma, lam);
    Advantages {
        reward,
        cost,
        ret_reward,
        ret_cost,
    }
}

/// `Â_r - λ Â_c`, normalized to zero mean and unit variance.
pub fn combined_advantage(adv: &Advantages, lambda: f64) -> Vec<f64> {
    let a: Vec<f64> = adv.reward.iter().zip(&adv.cost).map(|(r, c)| r - lambda * c).collect();
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    a.iter().map(|x| (x - mean) / sd).collect()
}

/// Per-sample clipped surrogate `min(ηÂ, clip(η)Â)` and its derivative
/// with respect to `ln η`.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Policy, critic, their optimizers, and the dual variable.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: PpoConfig,
    pub policy: Policy,
    pub critic: Mlp,
    pub obs: ObsNormalizer,
    pub policy_params: Vec<f64>,
    pub critic_params: Vec<f64>,
    pub dual: DualState,
    opt_pi: Adam,
    opt_v: Adam,
}

impl Agent {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        obs: ObsNormalizer,
        cfg: PpoConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut spec = PolicySpec::new(state_dim, action_dim, cfg.hidden.clone());
        spec.init_log_std = cfg.init_log_std;
        let policy = Policy::new(spec.clone())?;
        let critic = Mlp::new(spec.critic())?;
        let policy_params = policy.init_params(rng);
        let critic_params = critic.init_params(rng);
        Self::from_parts(cfg, policy, critic, obs, policy_params, critic_params, None)
    }

    pub fn from_parts(
        cfg: PpoConfig,
        policy: Policy,
        critic: Mlp,
        obs: ObsNormalizer,
        policy_params: Vec<f64>,
        critic_params: Vec<f64>,
        dual: Option<DualState>,
    ) -> Result<Self> {
        cfg.validate()?;
        crate::error::check_dim(policy.n_params(), policy_params.len(), "policy params")?;
        crate::error::check_dim(critic.n_params(), critic_params.len(), "critic params")?;
        crate::error::check_dim(policy.spec.state_dim, obs.scale.len(), "observation scaler")?;
        let adam = |lr| AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        Ok(Self {
            opt_pi: Adam::new(policy_params.len(), adam(cfg.policy_lr)),
            opt_v: Adam::new(critic_params.len(), adam(cfg.value_lr)),
            dual: dual.unwrap_or(DualState { lambda: cfg.lambda0 }),
            cfg,
            policy,
            critic,
            obs,
            policy_params,
            critic_params,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.policy.spec.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.policy.spec.action_dim
    }

    pub fn observe(&self, s: &CmdpState) -> Vec<f64> {
        self.obs.apply(&s.to_vec())
    }

    pub fn act(&self, obs: &[f64], rng: &mut SeededRng) -> ActSample {
        self.policy.act(&self.policy_params, obs, rng)
    }

    pub fn act_deterministic(&self, obs: &[f64]) -> Vec<f64> {
        self.policy.act_deterministic(&self.policy_params, obs)
    }

    /// `(V_r, V_c)`.
    pub fn values(&self, obs: &[f64]) -> (f64, f64) {
        let v = self.critic.forward(&self.critic_params, obs);
        (v[0], v[1])
    }

    /// Several epochs of minibatch clipped-surrogate ascent plus critic
    /// regression. Parameters are left untouched if any gradient is not finite.
    pub fn update(&mut self, buf: &RolloutBuffer, rng: &mut SeededRng) -> Result<UpdateStats> {
        if buf.is_empty() {
            return Err(Error::InvalidArgument("empty rollout buffer".into()));
        }
        let adv = buffer_gae(buf, self.cfg.gamma, self.cfg.gae_lambda);
        let a_hat = combined_advantage(&adv, self.dual.lambda);
        let n = buf.len();
        let mb = self.cfg.minibatch.min(n);
        let mut pi = self.policy_params.clone();
        let mut vp = self.critic_params.clone();
        let (mut opt_pi, mut opt_v) = (self.opt_pi.clone(), self.opt_v.clone());
        let mut stats = UpdateStats::default();
        let mut count = 0usize;
        let mut idx: Vec<usize> = (0..n).collect();
        let mut g_pi = vec![0.0; pi.len()];
        let mut g_v = vec![0.0; vp.len()];
        for _ in 0..self.cfg.epochs {
            rng.shuffle(&mut idx);
            for chunk in idx.chunks(mb) {
                g_pi.iter_mut().for_each(|g| *g = 0.0);
                g_v.iter_mut().for_each(|g| *g = 0.0);
                let inv = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let t = &buf.steps[i];
                    let lp = self.policy.log_prob(&pi, &t.obs, &t.pre);
                    let log_ratio = lp - t.log_prob;
                    let ratio = log_ratio.exp();
                    let (obj, dobj) = clipped_surrogate(ratio, a_hat[i], self.cfg.clip);
                    if dobj != 0.0 {
                        // minimize -objective; d ratio / d logp = ratio
                        self.policy.log_prob_grad(&pi, &t.obs, &t.pre, -dobj * inv, &mut g_pi);
                    }
                    stats.surrogate += obj;
                    stats.approx_kl += ratio - 1.0 - log_ratio;
                    if (ratio - 1.0).abs() > self.cfg.clip {
                        stats.clip_fraction += 1.0;
                    }
                    let v = self.critic.forward(&vp, &t.obs);
                    let dv = [(v[0] - adv.ret_reward[i]) * inv, (v[1] - adv.ret_cost[i]) * inv];
                    stats.value_loss += 0.5 * ((v[0] - adv.ret_reward[i]).powi(2) + (v[1] - adv.ret_cost[i]).powi(2));
                    self.critic.backward(&vp, &t.obs, &dv, &mut g_v);
                    count += 1;
                }
                if !g_pi.iter().chain(&g_v).all(|g| g.is_finite()) {
                    return Err(Error::Numerical("non-finite PPO gradient".into()));
                }
                clip_grad_norm(&mut g_pi, self.cfg.max_grad_norm);
                clip_grad_norm(&mut g_v, self.cfg.max_grad_norm);
                opt_pi.step(&mut pi, &g_pi);
                opt_v.step(&mut vp, &g_v);
            }
        }
        if !pi.iter().chain(&vp).all(|p| p.is_finite()) {
            return Err(Error::Numerical("non-finite parameters after PPO update".into()));
        }
        self.policy_params = pi;
        self.critic_params = vp;
        self.opt_pi = opt_pi;
        self.opt_v = opt_v;
        let c = count.max(1) as f64;
        stats.surrogate /= c;
        stats.value_loss /= c;
        stats.approx_kl /= c;
        stats.clip_fraction /= c;
        Ok(stats)
    }

    pub fn dual_step(&mut self, cost_mean: f64) {
        self.dual = dual_update(self.dual, cost_mean, self.cfg.dual_lr, self.cfg.cost_threshold);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn surrogate_spot_values() {
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2).0, 1.2);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2).0, -0.8);
    }

    #[test]
    fn surrogate_gradient_vanishes_where_clip_binds() {
        // ratio pushed past the clip in the advantage's direction
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2).1, 0.0);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2).1, 0.0);
        // moving back toward the trust region keeps the gradient
        assert_eq!(clipped_surrogate(0.5, 1.0, 0.2).1, 0.5);
        assert_eq!(clipped_surrogate(1.5, -1.0, 0.2).1, -1.5);
        assert_eq!(clipped_surrogate(1.1, 2.0, 0.2).1, 2.2);
    }

    #[test]
    fn dual_spot_values() {
        let d = dual_update(DualState { lambda: 30.0 }, 0.01, 0.1, 0.005);
        assert!((d.lambda - 30.0005).abs() < 1e-12);
        let d = dual_update(DualState { lambda: 0.0 }, 0.001, 0.1, 0.005);
        assert_eq!(d.lambda, 0.0);
    }

    #[test]
    fn gae_degenerate_cases() {
        let r = [1.0, 2.0, 3.0];
        let (a, _) = gae(&r, &[0.0; 3], &[false, false, true], 0.9, 0.0);
        assert_eq!(a, vec![1.0, 2.0, 3.0]);
        let v = [0.5, -1.0, 2.0];
        let (a, ret) = gae(&r, &v, &[false, false, true], 0.0, 0.95);
        assert_eq!(a, vec![0.5, 3.0, 1.0]);
        assert_eq!(ret, vec![1.0, 2.0, 3.0]);
    }

    fn naive_gae(r: &[f64], v: &[f64], done: &[bool], g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        (0..n)
            .map(|t| {
                let mut s = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    let terminal = done[k] || k + 1 == n;
                    let nv = if terminal { 0.0 } else { v[k + 1] };
                    s += w * (r[k] + g * nv - v[k]);
                    if terminal {
                        break;
                    }
                    w *= g * l;
                }
                s
            })
            .collect()
    }

    proptest! {
        #[test]
        fn gae_matches_naive_sum(
            data in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0u8..6), 1..60),
            g in 0.0f64..1.0,
            l in 0.0f64..1.0,
        ) {
            let r: Vec<f64> = data.iter().map(|d| d.0).collect();
            let v: Vec<f64> = data.iter().map(|d| d.1).collect();
            let done: Vec<bool> = data.iter().map(|d| d.2 == 0).collect();
            let (a, _) = gae(&r, &v, &done, g, l);
            let b = naive_gae(&r, &v, &done, g, l);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }

        #[test]
        fn dual_stays_non_negative(costs in prop::collection::vec(0.0f64..1.0, 1..200), l0 in 0.0f64..5.0) {
            let mut d = DualState { lambda: l0 };
            for c in costs {
                d = dual_update(d, c, 0.5, 0.3);
                prop_assert!(d.lambda >= 0.0);
            }
        }
    }

    fn filled_buffer(agent: &Agent, zero_cost: bool, rng: &mut SeededRng) -> RolloutBuffer {
        let mut buf = RolloutBuffer::new(40);
        for t in 0..40 {
            let obs = rng.normal_vec(agent.state_dim());
            let s = agent.act(&obs, rng);
            let (v_r, v_c) = agent.values(&obs);
            buf.push(Transition {
                obs,
                pre: s.pre,
                log_prob: s.log_prob,
                reward: rng.normal(),
                cost: if zero_cost { 0.0 } else { rng.uniform() },
                v_r,
                v_c,
                done: t % 10 == 9,
            })
            .unwrap();
        }
        buf
    }

    #[test]
    fn zero_multiplier_ignores_cost_stream() {
        let cfg = PpoConfig {
            lambda0: 0.0,
            hidden: vec![8],
            minibatch: 16,
            epochs: 3,
            ..PpoConfig::default()
        };
        let make = || Agent::new(3, 2, ObsNormalizer::identity(3), cfg.clone(), &mut SeededRng::new(5, 0)).unwrap();
        let mut a = make();
        let mut b = make();
        let buf_a = filled_buffer(&a, false, &mut SeededRng::new(6, 0));
        let mut buf_b = filled_buffer(&b, true, &mut SeededRng::new(6, 0));
        // same draws except the cost column
        for (x, y) in buf_b.steps.iter_mut().zip(&buf_a.steps) {
            x.reward = y.reward;
            x.pre = y.pre.clone();
            x.log_prob = y.log_prob;
            x.obs = y.obs.clone();
            x.v_r = y.v_r;
        }
        a.update(&buf_a, &mut SeededRng::new(7, 0)).unwrap();
        b.update(&buf_b, &mut SeededRng::new(7, 0)).unwrap();
        assert_eq!(a.policy_params, b.policy_params);
    }

    #[test]
    fn update_moves_toward_positive_advantage() {
        let cfg = PpoConfig {
            lambda0: 0.0,
            hidden: vec![8],
            policy_lr: 1e-2,
            ..PpoConfig::default()
        };
        let mut agent = Agent::new(1, 1, ObsNormalizer::identity(1), cfg, &mut SeededRng::new(1, 0)).unwrap();
        let mut rng = SeededRng::new(2, 0);
        for _ in 0..20 {
            let mut buf = RolloutBuffer::new(64);
            for _ in 0..64 {
                let s = agent.act(&[0.0], &mut rng);
                buf.push(Transition {
                    obs: vec![0.0],
                    reward: s.action[0],
                    cost: 0.0,
                    v_r: 0.0,
                    v_c: 0.0,
                    done: true,
                    pre: s.pre,
                    log_prob: s.log_prob,
                })
                .unwrap();
            }
            agent.update(&buf, &mut rng).unwrap();
        }
        assert!(agent.act_deterministic(&[0.0])[0] > 0.5);
    }

    #[test]
    fn buffer_capacity_enforced() {
        let mut b = RolloutBuffer::new(1);
        let t = Transition {
            obs: vec![],
            pre: vec![],
            log_prob: 0.0,
            reward: 0.0,
            cost: 0.0,
            v_r: 0.0,
            v_c: 0.0,
            done: true,
        };
        b.push(t.clone()).unwrap();
        assert!(b.is_full());
        assert!(b.push(t).is_err());
    }
}
