//! Analytic floating-point operation counts per decision step, as the
//! system dimensions (B, U, K, M) vary. A multiply-add counts as 2 and a
//! complex multiply-add as 8.

use serde::Serialize;

use crate::env::EnvConfig;
use crate::genmodel::virtual_cmdp::{kan_spec, StateLayout};
use crate::genmodel::FitConfig;
use crate::rl::PpoConfig;

#[derive(Debug, Clone, Serialize)]
pub struct OpCountRow {
    pub b: usize,
    pub u: usize,
    pub k: usize,
    pub m: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Beam measurement, SINR, and finite-blocklength bits.
    pub env_step: u64,
    pub policy_forward: u64,
    /// One KAN regressor evaluation (reward or cost).
    pub kan_forward: u64,
    pub eacgmm_channel: u64,
    pub eacgmm_queue: u64,
    /// Reward, cost, and both conditional transition draws.
    pub virtual_step: u64,
}

fn mlp_flops(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| (2 * w[0] * w[1] + 2 * w[1]) as u64).sum()
}

fn kan_flops(widths: &[usize], grid: usize, order: usize) -> u64 {
    let basis = (order + 1) * (order + 2) / 2 * 3 + 2 * (order + 1) + 8 + (grid + 2 * order).ilog2() as usize;
    widths.windows(2).map(|w| (w[0] * w[1] * basis) as u64).sum()
}

/// One EA-CGMM draw with `g` components, output block `m`, condition block `d`.
fn eacgmm_flops(g: usize, m: usize, d: usize) -> u64 {
    let per = d * (d + 1) // marginal whitening
        + 2 * d           // squared distance
        + 2 * m * d       // coupling term
        + m * m; // triangular solve for the mean
    (g * per + 4 * g + m * m + 2 * m) as u64 // weights plus one sample
}

pub fn op_counts(cfg: &EnvConfig, ppo: &PpoConfig, fit: &FitConfig) -> OpCountRow {
    let (b, u, k, m) = (cfg.n_aps, cfg.n_users, cfg.n_subbands, cfg.n_antennas);
    let pbm = (b * u * k * m * m * 8 + b * u * k * m * 3) as u64;
    let sinr = (k * u * u * b * m * 8 + k * u * (u + 4)) as u64;
    let bits = (u * k * 20) as u64;
    let layout = StateLayout::from_config(cfg);
    let s = layout.state_dim();
    let a = layout.action_dim;
    let mut w = vec![s];
    w.extend(&ppo.hidden);
    w.push(a);
    let spec = kan_spec(s + a, &fit.kan_hidden, fit.kan_grid);
    let kan = kan_flops(&spec.widths, spec.grid_size, spec.spline_order);
    let g = fit.transition_components;
    let ch = eacgmm_flops(g, layout.pbm_dim, layout.pbm_dim);
    let q = eacgmm_flops(g, layout.queue_dim(), a + s);
    OpCountRow {
        b,
        u,
        k,
        m,
        state_dim: s,
        action_dim: a,
        env_step: pbm + sinr + bits,
        policy_forward: mlp_flops(&w),
        kan_forward: kan,
        eacgmm_channel: ch,
        eacgmm_queue: q,
        virtual_step: 2 * kan + ch + q,
    }
}

/// The desk profile and one-factor-at-a-time doublings, plus the full-scale profile.
pub fn op_count_sweep(ppo: &PpoConfig, fit: &FitConfig) -> Vec<OpCountRow> {
    let base = EnvConfig::desk();
    let mut cfgs = vec![base.clone()];
    for f in 0..4 {
        let mut c = base.clone();
        match f {
            0 => c.n_aps *= 2,
            1 => c.n_users *= 2,
            2 => c.n_subbands *= 2,
            _ => c.n_antennas *= 2,
        }
        cfgs.push(c);
    }
    cfgs.push(EnvConfig::full());
    cfgs.iter().map(|c| op_counts(c, ppo, fit)).collect()
}
