//! The learned surrogate environment: reward/cost regressors, initial-state
//! mixtures and evidence-aware transition mixtures behind the same
//! reset/step contract as the real environment.
//!
//! All mixtures live in standardized coordinates. Queue counts are
//! dequantized with uniform noise before fitting and rounded on sampling.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::eacgmm::{ConditionalModel, DEFAULT_ALPHA};
use super::gmm::Gmm;
use super::vae::{generate_gmm, vae_chmdn_train, VaeChmdn, VaeChmdnSpec, VaeConfig};
use crate::env::{Cmdp, CmdpState, Dataset, EnvConfig, StepOutcome};
use crate::error::{check_dim, Error, Result};
use crate::mathcore::{mmd_sq_median, BlockSplit};
use crate::nn::train::split_indices;
use crate::nn::{
    train_regressor, Activation, Kan, KanSpec, Mlp, MlpSpec, RegressionReport, Regressor, RegressorFile, Standardizer,
    TrainConfig,
};
use crate::rng::SeededRng;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub pbm_dim: usize,
    pub n_users: usize,
    pub action_dim: usize,
    pub horizon: usize,
}

impl StateLayout {
    pub fn from_config(cfg: &EnvConfig) -> Self {
        Self {
            pbm_dim: cfg.pbm_dim(),
            n_users: cfg.n_users,
            action_dim: cfg.action_dim(),
            horizon: cfg.horizon,
        }
    }

    pub fn queue_dim(&self) -> usize {
        2 * self.n_users
    }

    pub fn state_dim(&self) -> usize {
        self.pbm_dim + self.queue_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualCmdp {
    pub env_hash: String,
    pub layout: StateLayout,
    pub r_scaler: Standardizer,
    pub q_scaler: Standardizer,
    pub init_r: Gmm,
    pub init_q: Gmm,
    /// Joint over `(r_{t+1}, r_t)`.
    pub channel: ConditionalModel,
    /// Joint over `(q_{t+1}, a_t, r_t, q_t)`.
    pub queue: ConditionalModel,
    pub reward_model: RegressorFile,
    pub cost_model: RegressorFile,
    pub cost_threshold: f64,
}

fn round_queue(v: f64) -> u64 {
    if v.is_finite() && v > 0.0 {
        v.round() as u64
    } else {
        0
    }
}

impl VirtualCmdp {
    fn assemble(&self, r_scaled: &[f64], q_scaled: &[f64]) -> CmdpState {
        let u = self.layout.n_users;
        let r = self.r_scaler.invert(r_scaled).into_iter().map(|v| v.max(0.0)).collect();
        let q = self.q_scaler.invert(q_scaled);
        let q_buf: Vec<u64> = q[..u].iter().map(|&v| round_queue(v)).collect();
        let q_urg = q[u..]
            .iter()
            .zip(&q_buf)
            .map(|(&v, &b)| round_queue(v).min(b))
            .collect();
        CmdpState { r, q_buf, q_urg }
    }

    fn scaled_state(&self, s: &CmdpState) -> (Vec<f64>, Vec<f64>) {
        let q: Vec<f64> = s.q_buf.iter().chain(&s.q_urg).map(|&v| v as f64).collect();
        (self.r_scaler.apply(&s.r), self.q_scaler.apply(&q))
    }

    pub fn virtual_reset(&self, rng: &mut SeededRng) -> CmdpState {
        let r = self.init_r.sample(rng);
        let q = self.init_q.sample(rng);
        self.assemble(&r, &q)
    }

    /// Predicted reward (clamped at 0) and cost (clamped into [0, 1]).
    pub fn predict_reward_cost(&self, s: &CmdpState, action: &[f64]) -> (f64, f64) {
        let mut x = s.to_vec();
        x.extend_from_slice(action);
        let r = self.reward_model.predict(&x)[0].max(0.0);
        let c = self.cost_model.predict(&x)[0].clamp(0.0, 1.0);
        (r, c)
    }

    pub fn virtual_step(&self, s: &CmdpState, action: &[f64], rng: &mut SeededRng) -> Result<StepOutcome> {
        check_dim(self.layout.action_dim, action.len(), "virtual action")?;
        check_dim(self.layout.pbm_dim, s.r.len(), "virtual state pbm")?;
        let (reward, cost) = self.predict_reward_cost(s, action);
        let (r_s, q_s) = self.scaled_state(s);
        let r_next = self.channel.sample(&r_s, rng)?;
        let mut w = Vec::with_capacity(self.queue.condition_dim());
        w.extend_from_slice(action);
        w.extend_from_slice(&r_s);
        w.extend_from_slice(&q_s);
        let q_next = self.queue.sample(&w, rng)?;
        let u = self.layout.n_users;
        Ok(StepOutcome {
            next_state: self.assemble(&r_next, &q_next),
            reward,
            cost_per_user: vec![cost; u],
            cost_agg: cost,
            vio: vec![0; u],
            drop: vec![0; u],
            tx: vec![0; u],
            bits_served: vec![0.0; u],
        })
    }

    pub fn check_env(&self, cfg: &EnvConfig) -> Result<()> {
        let h = cfg.hash();
        if h != self.env_hash {
            return Err(Error::HashMismatch {
                artifact: self.env_hash.clone(),
                config: h,
            });
        }
        Ok(())
    }
}

/// Stateful wrapper implementing [`Cmdp`] over a shared model.
#[derive(Debug, Clone)]
pub struct VirtualEnv {
    model: Arc<VirtualCmdp>,
    state: Option<CmdpState>,
}

impl VirtualEnv {
    pub fn new(model: Arc<VirtualCmdp>) -> Self {
        Self { model, state: None }
    }

    pub fn model(&self) -> &VirtualCmdp {
        &self.model
    }
}

impl Cmdp for VirtualEnv {
    fn state_dim(&self) -> usize {
        self.model.layout.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.model.layout.action_dim
    }

    fn horizon(&self) -> usize {
        self.model.layout.horizon
    }

    fn reset(&mut self, rng: &mut SeededRng) -> CmdpState {
        let s = self.model.virtual_reset(rng);
        self.state = Some(s.clone());
        s
    }

    fn step(&mut self, action: &[f64], rng: &mut SeededRng) -> Result<StepOutcome> {
        let s = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("virtual step before reset".into()))?;
        let out = self.model.virtual_step(s, action, rng)?;
        self.state = Some(out.next_state.clone());
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub seed: u64,
    pub init_components: usize,
    pub transition_components: usize,
    pub alpha_channel: f64,
    pub alpha_queue: f64,
    pub latent: usize,
    pub vae_hidden: usize,
    pub vae: VaeConfig,
    /// Seed of the single latent draw decoded into the online transition mixtures.
    pub decode_seed: u64,
    pub kan_hidden: Vec<usize>,
    pub kan_grid: usize,
    pub regressor: TrainConfig,
    /// Also train a parameter-matched MLP on the reward for comparison.
    pub mlp_baseline: bool,
    /// Draws averaged per condition for the transition MAE.
    pub mae_draws: usize,
    pub cost_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            init_components: 8,
            transition_components: 8,
            alpha_channel: DEFAULT_ALPHA,
            alpha_queue: DEFAULT_ALPHA,
            latent: 4,
            vae_hidden: 32,
            vae: VaeConfig::default(),
            decode_seed: 7,
            kan_hidden: vec![4],
            kan_grid: 10,
            regressor: TrainConfig {
                lr: 3e-3,
                batch_size: 256,
                epochs: 60,
                lr_final_fraction: 0.05,
                val_fraction: 0.1,
                ..Default::default()
            },
            mlp_baseline: true,
            mae_draws: 8,
            cost_threshold: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorRow {
    pub model: String,
    pub target: String,
    pub params: usize,
    pub report: RegressionReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionFidelity {
    /// Mean over dimensions of MAE divided by the observed range.
    pub r_mae_single: f64,
    pub r_mae_avg: f64,
    pub q_mae_single: f64,
    pub q_mae_avg: f64,
    pub n_test: usize,
    /// Fraction of test conditions with at least one credible component.
    pub r_credible_rate: f64,
    pub q_credible_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub regressors: Vec<RegressorRow>,
    pub transition: TransitionFidelity,
    /// Initial-state MMD^2 (standardized units) between virtual resets and
    /// the dataset's initial states, with a real-vs-real calibration from
    /// splitting the initial states in half.
    pub init_mmd: f64,
    pub init_mmd_calibration: f64,
    pub n_initial_states: usize,
}

/// MLP hidden width giving about `target` parameters with two equal hidden layers.
pub fn mlp_parity_width(n_in: usize, target: usize) -> usize {
    // params(w) = w^2 + (n_in + 3) w + 1
    let b = (n_in + 3) as f64;
    let w = (-b + (b * b + 4.0 * (target as f64 - 1.0)).sqrt()) / 2.0;
    (w.round() as usize).max(1)
}

pub fn kan_spec(n_in: usize, hidden: &[usize], grid: usize) -> KanSpec {
    let mut widths = vec![n_in];
    widths.extend_from_slice(hidden);
    widths.push(1);
    let mut spec = KanSpec::new(widths);
    spec.grid_size = grid;
    spec
}

pub fn parity_mlp(n_in: usize, target_params: usize) -> Result<Mlp> {
    let w = mlp_parity_width(n_in, target_params);
    Mlp::new(MlpSpec::uniform(
        vec![n_in, w, w, 1],
        Activation::Silu,
        Activation::Identity,
    ))
}

fn dequantize(q: &[f64], rng: &mut SeededRng) -> Vec<f64> {
    q.iter().map(|v| v + rng.uniform() - 0.5).collect()
}

fn split_state(v: &[f64], pbm: usize) -> (&[f64], &[f64]) {
    v.split_at(pbm)
}

fn normalized_mae(pred: &[Vec<f64>], truth: &[Vec<f64>], range: &[f64]) -> f64 {
    let dims: Vec<usize> = (0..range.len()).filter(|&k| range[k] > 0.0).collect();
    if dims.is_empty() || truth.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &k in &dims {
        let mae: f64 = pred.iter().zip(truth).map(|(p, t)| (p[k] - t[k]).abs()).sum::<f64>() / truth.len() as f64;
        total += mae / range[k];
    }
    total / dims.len() as f64
}

fn column_range(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d)
        .map(|k| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[k]), hi.max(r[k]))
            });
            hi - lo
        })
        .collect()
}

fn fit_mixture(data: &[Vec<f64>], g: usize, cfg: &FitConfig, stream: u64) -> Result<Gmm> {
    let spec = VaeChmdnSpec::new(data[0].len(), cfg.latent, g, cfg.vae_hidden);
    let model = VaeChmdn::new(spec)?;
    let vcfg = VaeConfig {
        seed: cfg.seed ^ stream,
        ..cfg.vae.clone()
    };
    let trained = vae_chmdn_train(&model, data, &vcfg)?;
    generate_gmm(&model, &trained.params, &mut SeededRng::new(cfg.decode_seed, stream))
}

/// Trains every component of the virtual CMDP on the training split and
/// evaluates it on the held-out split.
pub fn fit_virtual_cmdp(ds: &Dataset, env_cfg: &EnvConfig, cfg: &FitConfig) -> Result<(VirtualCmdp, FidelityReport)> {
    let layout = StateLayout::from_config(env_cfg);
    let h = &ds.header;
    if h.env_hash != env_cfg.hash() {
        return Err(Error::HashMismatch {
            artifact: h.env_hash.clone(),
            config: env_cfg.hash(),
        });
    }
    check_dim(layout.state_dim(), h.state_dim, "dataset state dim")?;
    check_dim(layout.action_dim, h.action_dim, "dataset action dim")?;
    let joint_q_dim = layout.queue_dim() + layout.action_dim + layout.state_dim();
    let min_tuples = 10 * joint_q_dim;
    if ds.len() < min_tuples {
        return Err(Error::InsufficientData(format!(
            "{} tuples; fitting needs at least {min_tuples}",
            ds.len()
        )));
    }
    let pbm = layout.pbm_dim;
    let mut report = FidelityReport::default();

    // reward and cost regressors on (s, a)
    let inputs: Vec<Vec<f64>> = ds
        .records
        .iter()
        .map(|r| r.state.iter().chain(&r.action).copied().collect())
        .collect();
    let rewards: Vec<Vec<f64>> = ds.records.iter().map(|r| vec![r.reward]).collect();
    let costs: Vec<Vec<f64>> = ds.records.iter().map(|r| vec![r.cost]).collect();
    let n_in = inputs[0].len();
    let rcfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.regressor.clone()
    };
    let kan = Kan::new(kan_spec(n_in, &cfg.kan_hidden, cfg.kan_grid), None)?;
    let kan_params = kan.spec.param_count();
    let reward_fit = train_regressor(Regressor::Kan(kan.clone()), &inputs, &rewards, &rcfg)?;
    report.regressors.push(RegressorRow {
        model: "kan".into(),
        target: "reward".into(),
        params: kan_params,
        report: reward_fit.report.clone(),
    });
    let cost_fit = train_regressor(Regressor::Kan(kan), &inputs, &costs, &rcfg)?;
    report.regressors.push(RegressorRow {
        model: "kan".into(),
        target: "cost".into(),
        params: kan_params,
        report: cost_fit.report.clone(),
    });
    if cfg.mlp_baseline {
        let mlp = parity_mlp(n_in, kan_params)?;
        let params = mlp.spec.param_count();
        let fit = train_regressor(Regressor::Mlp(mlp), &inputs, &rewards, &rcfg)?;
        report.regressors.push(RegressorRow {
            model: "mlp".into(),
            target: "reward".into(),
            params,
            report: fit.report,
        });
    }

    // shared split for the generative models
    let (train_idx, test_idx) = split_indices(ds.len(), rcfg.test_fraction, cfg.seed);
    let mut rng = SeededRng::new(cfg.seed, 0xf17);
    let train_r: Vec<Vec<f64>> = train_idx.iter().map(|&i| ds.records[i].state[..pbm].to_vec()).collect();
    let train_q: Vec<Vec<f64>> = train_idx.iter().map(|&i| ds.records[i].state[pbm..].to_vec()).collect();
    let r_scaler = Standardizer::fit(&train_r)?;
    let q_scaler = Standardizer::fit(&train_q)?;
    let scale_state = |v: &[f64], rng: &mut SeededRng| -> (Vec<f64>, Vec<f64>) {
        let (r, q) = split_state(v, pbm);
        (r_scaler.apply(r), q_scaler.apply(&dequantize(q, rng)))
    };

    // initial-state models
    let initial = ds.initial_states();
    let init_rows: Vec<(Vec<f64>, Vec<f64>)> = initial.iter().map(|s| scale_state(s, &mut rng)).collect();
    let init_r_data: Vec<Vec<f64>> = init_rows.iter().map(|p| p.0.clone()).collect();
    let init_q_data: Vec<Vec<f64>> = init_rows.iter().map(|p| p.1.clone()).collect();
    let g_init_r = cfg.init_components.min(init_r_data.len() / (pbm + 2)).max(1);
    let g_init_q = cfg
        .init_components
        .min(init_q_data.len() / (layout.queue_dim() + 2))
        .max(1);
    if g_init_r < cfg.init_components || g_init_q < cfg.init_components {
        log::warn!(
            "only {} initial states: init mixtures use {g_init_r} (r) and {g_init_q} (q) components",
            initial.len()
        );
    }
    let init_r = fit_mixture(&init_r_data, g_init_r, cfg, 0x11)?;
    let init_q = fit_mixture(&init_q_data, g_init_q, cfg, 0x12)?;

    // transition joints
    let mut ch_rows = Vec::with_capacity(train_idx.len());
    let mut q_rows = Vec::with_capacity(train_idx.len());
    for &i in &train_idx {
        let rec = &ds.records[i];
        let (r, q) = scale_state(&rec.state, &mut rng);
        let (r2, q2) = scale_state(&rec.next_state, &mut rng);
        let mut c: Vec<f64> = r2.clone();
        c.extend_from_slice(&r);
        ch_rows.push(c);
        let mut w = q2;
        w.extend_from_slice(&rec.action);
        w.extend_from_slice(&r);
        w.extend_from_slice(&q);
        q_rows.push(w);
    }
    let channel_joint = fit_mixture(&ch_rows, cfg.transition_components, cfg, 0x21)?;
    let queue_joint = fit_mixture(&q_rows, cfg.transition_components, cfg, 0x22)?;
    let channel = ConditionalModel::new(channel_joint, BlockSplit::new(pbm), cfg.alpha_channel)?;
    let queue = ConditionalModel::new(queue_joint, BlockSplit::new(layout.queue_dim()), cfg.alpha_queue)?;

    let mut reward_model = reward_fit.file;
    let mut cost_model = cost_fit.file;
    reward_model.env_hash = Some(h.env_hash.clone());
    cost_model.env_hash = Some(h.env_hash.clone());
    let v = VirtualCmdp {
        env_hash: h.env_hash.clone(),
        layout,
        r_scaler,
        q_scaler,
        init_r,
        init_q,
        channel,
        queue,
        reward_model,
        cost_model,
        cost_threshold: cfg.cost_threshold,
    };

    report.transition = transition_fidelity(&v, ds, &test_idx, cfg.mae_draws.max(1), cfg.seed)?;
    let (mmd, calib) = init_fidelity(&v, &initial, cfg.seed)?;
    report.init_mmd = mmd;
    report.init_mmd_calibration = calib;
    report.n_initial_states = initial.len();
    Ok((v, report))
}

/// Standardized state vectors for MMD comparisons.
pub fn standardize_states(v: &VirtualCmdp, states: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pbm = v.layout.pbm_dim;
    states
        .iter()
        .map(|s| {
            let mut out = v.r_scaler.apply(&s[..pbm]);
            out.extend(v.q_scaler.apply(&s[pbm..]));
            out
        })
        .collect()
}

fn init_fidelity(v: &VirtualCmdp, initial: &[Vec<f64>], seed: u64) -> Result<(f64, f64)> {
    if initial.len() < 4 {
        return Ok((f64::NAN, f64::NAN));
    }
    let half = initial.len() / 2;
    let mut rng = SeededRng::new(seed, 0x1a1);
    let virt: Vec<Vec<f64>> = (0..half).map(|_| v.virtual_reset(&mut rng).to_vec()).collect();
    let a = standardize_states(v, &initial[..half]);
    let b = standardize_states(v, &initial[half..2 * half]);
    let vs = standardize_states(v, &virt);
    Ok((mmd_sq_median(&vs, &a)?, mmd_sq_median(&b, &a)?))
}

/// One-step prediction error on held-out tuples, single draw and averaged draws.
pub fn transition_fidelity(
    v: &VirtualCmdp,
    ds: &Dataset,
    test_idx: &[usize],
    draws: usize,
    seed: u64,
) -> Result<TransitionFidelity> {
    let pbm = v.layout.pbm_dim;
    let mut rng = SeededRng::new(seed, 0x7e5);
    let truth_r: Vec<Vec<f64>> = test_idx
        .iter()
        .map(|&i| ds.records[i].next_state[..pbm].to_vec())
        .collect();
    let truth_q: Vec<Vec<f64>> = test_idx
        .iter()
        .map(|&i| ds.records[i].next_state[pbm..].to_vec())
        .collect();
    if truth_r.is_empty() {
        return Ok(TransitionFidelity::default());
    }
    let all_next: Vec<Vec<f64>> = ds.records.iter().map(|r| r.next_state.clone()).collect();
    let range = column_range(&all_next);
    let (range_r, range_q) = range.split_at(pbm);
    let mut single_r = Vec::new();
    let mut single_q = Vec::new();
    let mut avg_r = Vec::new();
    let mut avg_q = Vec::new();
    let mut cred_r = 0usize;
    let mut cred_q = 0usize;
    for &i in test_idx {
        let rec = &ds.records[i];
        let s = CmdpState::from_vec(&rec.state, v.layout.n_users)?;
        let (r_s, q_s) = v.scaled_state(&s);
        let mut w = rec.action.clone();
        w.extend_from_slice(&r_s);
        w.extend_from_slice(&q_s);
        let inf_r = v.channel.infer(&r_s)?;
        let inf_q = v.queue.infer(&w)?;
        cred_r += (inf_r.credible() > 0) as usize;
        cred_q += (inf_q.credible() > 0) as usize;
        let mut sum_r = vec![0.0; pbm];
        let mut sum_q = vec![0.0; v.layout.queue_dim()];
        for d in 0..draws {
            let next = v
                .assemble(&inf_r.gmm.sample(&mut rng), &inf_q.gmm.sample(&mut rng))
                .to_vec();
            let (nr, nq) = next.split_at(pbm);
            if d == 0 {
                single_r.push(nr.to_vec());
                single_q.push(nq.to_vec());
            }
            sum_r.iter_mut().zip(nr).for_each(|(a, b)| *a += b / draws as f64);
            sum_q.iter_mut().zip(nq).for_each(|(a, b)| *a += b / draws as f64);
        }
        avg_r.push(sum_r);
        avg_q.push(sum_q);
    }
    let n = test_idx.len();
    Ok(TransitionFidelity {
        r_mae_single: normalized_mae(&single_r, &truth_r, range_r),
        r_mae_avg: normalized_mae(&avg_r, &truth_r, range_r),
        q_mae_single: normalized_mae(&single_q, &truth_q, range_q),
        q_mae_avg: normalized_mae(&avg_q, &truth_q, range_q),
        n_test: n,
        r_credible_rate: cred_r as f64 / n as f64,
        q_credible_rate: cred_q as f64 / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MixtureRef {
    file: String,
    #[serde(default)]
    split: Option<usize>,
    #[serde(default)]
    alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    env_hash: String,
    layout: StateLayout,
    r_scaler: Standardizer,
    q_scaler: Standardizer,
    init_r: MixtureRef,
    init_q: MixtureRef,
    channel_joint: MixtureRef,
    queue_joint: MixtureRef,
    reward_model: String,
    cost_model: String,
    cost_threshold: f64,
}

impl VirtualCmdp {
    /// Writes `manifest.json`, one `.gmm` block per mixture, and the two
    /// regressor model files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mixtures = [
            ("init_r.gmm", &self.init_r),
            ("init_q.gmm", &self.init_q),
            ("channel_joint.gmm", &self.channel.joint),
            ("queue_joint.gmm", &self.queue.joint),
        ];
        for (name, g) in mixtures {
            std::fs::write(dir.join(name), g.to_bytes())?;
        }
        self.reward_model.save(&dir.join("reward.json"))?;
        self.cost_model.save(&dir.join("cost.json"))?;
        let plain = |f: &str| MixtureRef {
            file: f.into(),
            split: None,
            alpha: None,
        };
        let manifest = Manifest {
            version: BUNDLE_VERSION,
            env_hash: self.env_hash.clone(),
            layout: self.layout,
            r_scaler: self.r_scaler.clone(),
            q_scaler: self.q_scaler.clone(),
            init_r: plain("init_r.gmm"),
            init_q: plain("init_q.gmm"),
            channel_joint: MixtureRef {
                file: "channel_joint.gmm".into(),
                split: Some(self.channel.split.m),
                alpha: Some(self.channel.alpha),
            },
            queue_joint: MixtureRef {
                file: "queue_joint.gmm".into(),
                split: Some(self.queue.split.m),
                alpha: Some(self.queue.alpha),
            },
            reward_model: "reward.json".into(),
            cost_model: "cost.json".into(),
            cost_threshold: self.cost_threshold,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    /// Loads a bundle and verifies it was fitted against `cfg`.
    pub fn load(dir: &Path, cfg: &EnvConfig) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if m.version != BUNDLE_VERSION {
            return Err(Error::Format(format!("bundle version {} unsupported", m.version)));
        }
        let read = |r: &MixtureRef| -> Result<Gmm> { Gmm::from_bytes(&std::fs::read(dir.join(&r.file))?) };
        let cond = |r: &MixtureRef| -> Result<ConditionalModel> {
            let split = r
                .split
                .ok_or_else(|| Error::Format(format!("{} lacks a split", r.file)))?;
            ConditionalModel::new(read(r)?, BlockSplit::new(split), r.alpha.unwrap_or(DEFAULT_ALPHA))
        };
        let v = Self {
            env_hash: m.env_hash.clone(),
            layout: m.layout,
            r_scaler: m.r_scaler.clone(),
            q_scaler: m.q_scaler.clone(),
            init_r: read(&m.init_r)?,
            init_q: read(&m.init_q)?,
            channel: cond(&m.channel_joint)?,
            queue: cond(&m.queue_joint)?,
            reward_model: RegressorFile::load(&dir.join(&m.reward_model))?,
            cost_model: RegressorFile::load(&dir.join(&m.cost_model))?,
            cost_threshold: m.cost_threshold,
        };
        v.check_env(cfg)?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_width_hits_target() {
        let w = mlp_parity_width(44, 5400);
        let p = w * w + 47 * w + 1;
        assert!((p as f64 - 5400.0).abs() / 5400.0 < 0.05, "{w} {p}");
        let mlp = parity_mlp(44, 5400).unwrap();
        assert_eq!(mlp.spec.param_count(), p);
    }

    #[test]
    fn normalized_mae_skips_constant_dims() {
        let pred = vec![vec![1.0, 5.0], vec![2.0, 5.0]];
        let truth = vec![vec![1.5, 5.0], vec![2.0, 5.0]];
        assert!((normalized_mae(&pred, &truth, &[2.0, 0.0]) - 0.125).abs() < 1e-15);
    }
}
