//! Tanh-squashed diagonal Gaussian policy over an MLP torso.
//!
//! Parameters are laid out `[torso | log_std]`; the log-std vector is
//! state independent.

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{check_dim, Result};
use crate::nn::activation::softplus;
use crate::nn::{Activation, Differentiable, Mlp, MlpSpec};
use crate::rng::SeededRng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Largest magnitude an emitted action may take.
const EDGE: f64 = 1.0 - 1e-12;

/// Affine observation scaling `(x - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ObsNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// PBM entries over the strongest expected beam amplitude, queue counts
    /// over the expected backlog within one deadline.
    pub fn from_env(cfg: &EnvConfig) -> Self {
        let amp = 10f64.powf(cfg.channel.path_gain_db_max / 20.0) * (cfg.n_antennas as f64).sqrt();
        let backlog = cfg.arrival_rate * cfg.deadline_slots as f64 + 1.0;
        let mut scale = vec![amp; cfg.pbm_dim()];
        scale.extend(std::iter::repeat_n(backlog, cfg.queue_dim()));
        Self {
            offset: vec![0.0; scale.len()],
            scale,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| (v - o) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl PolicySpec {
    pub fn new(state_dim: usize, action_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            state_dim,
            action_dim,
            hidden,
            init_log_std: -0.5,
        }
    }

    pub fn torso(&self) -> MlpSpec {
        let mut w = vec![self.state_dim];
        w.extend(&self.hidden);
        w.push(self.action_dim);
        MlpSpec::uniform(w, Activation::Tanh, Activation::Identity)
    }

    /// Value network with reward and cost heads.
    pub fn critic(&self) -> MlpSpec {
        let mut w = vec![self.state_dim];
        w.extend(&self.hidden);
        w.push(2);
        MlpSpec::uniform(w, Activation::Tanh, Activation::Identity)
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub spec: PolicySpec,
    torso: Mlp,
}

/// One sampled decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ActSample {
    /// Squashed action in (-1, 1).
    pub action: Vec<f64>,
    /// Pre-squash Gaussian draw.
    pub pre: Vec<f64>,
    pub log_prob: f64,
}

/// `ln(1 - tanh(u)^2)` without cancellation.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn squash(u: f64) -> f64 {
    u.tanh().clamp(-EDGE, EDGE)
}

impl Policy {
    pub fn new(spec: PolicySpec) -> Result<Self> {
        let torso = Mlp::new(spec.torso())?;
        Ok(Self { spec, torso })
    }

    pub fn n_params(&self) -> usize {
        self.torso.n_params() + self.spec.action_dim
    }

    pub fn init_params(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut p = self.torso.init_params(rng);
        // small output layer keeps initial means near zero
        let (wo, bo) = (self.torso.output_weight_offset(), self.torso.output_bias_offset());
        p[wo..bo].iter_mut().for_each(|v| *v *= 0.01);
        p.extend(std::iter::repeat_n(self.spec.init_log_std, self.spec.action_dim));
        p
    }

    fn log_std<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.torso.n_params()..]
    }

    pub fn mean(&self, params: &[f64], obs: &[f64]) -> Vec<f64> {
        self.torso.forward(&params[..self.torso.n_params()], obs)
    }

    fn clamped_log_std(&self, params: &[f64]) -> Vec<f64> {
        self.log_std(params)
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    /// Log-density of the squashed action whose pre-image is `pre`.
    pub fn log_prob(&self, params: &[f64], obs: &[f64], pre: &[f64]) -> f64 {
        let mean = self.mean(params, obs);
        let ls = self.clamped_log_std(params);
        gaussian_tanh_log_prob(&mean, &ls, pre)
    }

    /// Log-prob plus its gradient scaled by `scale`, accumulated into `grad`.
    pub fn log_prob_grad(&self, params: &[f64], obs: &[f64], pre: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let nt = self.torso.n_params();
        let mean = self.torso.forward(&params[..nt], obs);
        let raw = self.log_std(params);
        let ls = self.clamped_log_std(params);
        let lp = gaussian_tanh_log_prob(&mean, &ls, pre);
        let mut dmean = vec![0.0; mean.len()];
        for i in 0..mean.len() {
            let var = (2.0 * ls[i]).exp();
            let diff = pre[i] - mean[i];
            dmean[i] = scale * diff / var;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw[i]) {
                grad[nt + i] += scale * (diff * diff / var - 1.0);
            }
        }
        let (gt, _) = grad.split_at_mut(nt);
        self.torso.backward(&params[..nt], obs, &dmean, gt);
        lp
    }

    pub fn act(&self, params: &[f64], obs: &[f64], rng: &mut SeededRng) -> ActSample {
        let mean = self.mean(params, obs);
        let ls = self.clamped_log_std(params);
        let pre: Vec<f64> = mean.iter().zip(&ls).map(|(m, s)| m + s.exp() * rng.normal()).collect();
        let log_prob = gaussian_tanh_log_prob(&mean, &ls, &pre);
        ActSample {
            action: pre.iter().map(|&u| squash(u)).collect(),
            pre,
            log_prob,
        }
    }

    /// `tanh(mean)`.
    pub fn act_deterministic(&self, params: &[f64], obs: &[f64]) -> Vec<f64> {
        self.mean(params, obs).into_iter().map(squash).collect()
    }

    pub fn check_obs(&self, obs: &[f64]) -> Result<()> {
        check_dim(self.spec.state_dim, obs.len(), "policy observation")
    }
}

pub fn gaussian_tanh_log_prob(mean: &[f64], log_std: &[f64], pre: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(pre)
        .map(|((m, s), u)| {
            let z = (u - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LN_2PI - log_one_minus_tanh_sq(*u)
        })
        .sum()
}
