//! Beam codebook, probing-beam measurements, action decoding, SINR, and
//! finite-blocklength rates.

use std::f64::consts::{LOG2_E, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::channel::ChannelState;
use super::config::EnvConfig;
use super::RawAction;
use crate::error::{check_dim, Result};
use crate::mathcore::gaussian_q_inv;

/// `M` unit-norm DFT beams for a uniform linear array; `codebook[m][i]`.
pub fn build_codebook(m: usize) -> Vec<Vec<Complex64>> {
    let norm = 1.0 / (m as f64).sqrt();
    (0..m)
        .map(|beam| {
            (0..m)
                .map(|i| Complex64::from_polar(norm, 2.0 * PI * (i * beam) as f64 / m as f64))
                .collect()
        })
        .collect()
}

/// `h^H f`.
pub fn beam_gain(h: &[Complex64], f: &[Complex64]) -> Complex64 {
    h.iter().zip(f).map(|(a, b)| a.conj() * b).sum()
}

/// `|h^H f_m|` for every beam of the codebook.
pub fn pbm_of_vector(h: &[Complex64], codebook: &[Vec<Complex64>]) -> Vec<f64> {
    codebook.iter().map(|f| beam_gain(h, f).norm()).collect()
}

/// PBM vector ordered `b` outermost, then `u`, `k`, and beam `m` innermost.
pub fn compute_pbm(cfg: &EnvConfig, codebook: &[Vec<Complex64>], ch: &ChannelState) -> Vec<f64> {
    let m = cfg.n_antennas;
    let mut r = Vec::with_capacity(cfg.pbm_dim());
    for link in 0..cfg.n_links() {
        r.extend(pbm_of_vector(&ch.h[link * m..(link + 1) * m], codebook));
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedAction {
    pub zeta: Vec<bool>,
    pub beam_idx: Vec<usize>,
    /// Watts per (b, u, k).
    pub power: Vec<f64>,
}

impl DecodedAction {
    /// Scheduled power per AP, `sum_{u,k} zeta * P`.
    pub fn scheduled_power(&self, cfg: &EnvConfig) -> Vec<f64> {
        let per_ap = cfg.n_users * cfg.n_subbands;
        (0..cfg.n_aps)
            .map(|b| {
                (b * per_ap..(b + 1) * per_ap)
                    .filter(|&i| self.zeta[i])
                    .map(|i| self.power[i])
                    .sum()
            })
            .collect()
    }

    pub fn any_scheduled(&self) -> bool {
        self.zeta.iter().any(|&z| z)
    }
}

pub fn decode_zeta(v: f64) -> bool {
    v >= 0.0
}

pub fn decode_beam(v: f64, m: usize) -> usize {
    let idx = ((v + 1.0) * m as f64 / 2.0).floor();
    if idx <= 0.0 {
        0
    } else {
        (idx as usize).min(m - 1)
    }
}

/// Per-AP softmax of the power logits scaled by `P_max`.
pub fn decode_power(cfg: &EnvConfig, p_hat: &[f64]) -> Vec<f64> {
    let per_ap = cfg.n_users * cfg.n_subbands;
    let p_max = cfg.p_max_watts();
    let mut out = Vec::with_capacity(p_hat.len());
    for chunk in p_hat.chunks(per_ap) {
        let mx = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = chunk.iter().map(|v| (v - mx).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| p_max * e / total));
    }
    out
}

pub fn decode_action(cfg: &EnvConfig, raw: &RawAction) -> Result<DecodedAction> {
    let n = cfg.n_links();
    check_dim(n, raw.zeta_hat.len(), "zeta_hat")?;
    check_dim(n, raw.i_hat.len(), "i_hat")?;
    check_dim(n, raw.p_hat.len(), "p_hat")?;
    Ok(DecodedAction {
        zeta: raw.zeta_hat.iter().map(|&v| decode_zeta(v)).collect(),
        beam_idx: raw.i_hat.iter().map(|&v| decode_beam(v, cfg.n_antennas)).collect(),
        power: decode_power(cfg, &raw.p_hat),
    })
}

/// SINR of every UE on every subband, row-major `U x K`.
pub fn compute_sinr(cfg: &EnvConfig, codebook: &[Vec<Complex64>], ch: &ChannelState, act: &DecodedAction) -> Vec<f64> {
    let c = cfg.subcarriers_per_subband as f64;
    let noise = cfg.noise_power_watts();
    let mut gamma = vec![0.0; cfg.n_users * cfg.n_subbands];
    for k in 0..cfg.n_subbands {
        for u in 0..cfg.n_users {
            // amplitude received at u from the stream intended for v
            let received_from = |v: usize| -> Complex64 {
                let mut acc = Complex64::new(0.0, 0.0);
                for b in 0..cfg.n_aps {
                    let i = cfg.link_index(b, v, k);
                    if !act.zeta[i] {
                        continue;
                    }
                    let f = &codebook[act.beam_idx[i]];
                    let h = ch.vector(cfg, b, u, k);
                    acc += beam_gain(h, f) * (act.power[i] / c).sqrt();
                }
                acc
            };
            let own_scheduled = (0..cfg.n_aps).any(|b| act.zeta[cfg.link_index(b, u, k)]);
            if !own_scheduled {
                continue;
            }
            let desired = received_from(u).norm_sqr();
            let interference: f64 = (0..cfg.n_users)
                .filter(|&v| v != u)
                .map(|v| received_from(v).norm_sqr())
                .sum();
            gamma[u * cfg.n_subbands + k] = desired / (interference + noise);
        }
    }
    gamma
}

/// Channel dispersion `(log2 e)^2 (1 - (1 + gamma)^{-2})`.
pub fn dispersion(gamma: f64) -> f64 {
    LOG2_E * LOG2_E * (1.0 - (1.0 + gamma).powi(-2))
}

/// Shannon part `sum_k C N log2(1 + gamma_k)`.
pub fn shannon_bits(res_per_tfu: f64, gamma: &[f64]) -> f64 {
    gamma.iter().map(|g| res_per_tfu * (1.0 + g).log2()).sum()
}

/// Finite-blocklength bits over the UE's subbands, clamped at zero.
pub fn finite_blocklength_bits(res_per_tfu: f64, q_inv_eps: f64, gamma: &[f64]) -> f64 {
    let shannon = shannon_bits(res_per_tfu, gamma);
    let disp: f64 = gamma.iter().map(|&g| res_per_tfu * dispersion(g)).sum();
    (shannon - q_inv_eps * disp.sqrt()).max(0.0)
}

pub fn compute_bits(cfg: &EnvConfig, gamma_row: &[f64]) -> Result<f64> {
    let q = gaussian_q_inv(cfg.block_error_prob)?;
    Ok(finite_blocklength_bits(cfg.res_per_tfu(), q, gamma_row))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codebook_is_orthonormal() {
        assert_eq!(build_codebook(1), vec![vec![Complex64::new(1.0, 0.0)]]);
        let cb = build_codebook(4);
        for i in 0..4 {
            for j in 0..4 {
                let ip = beam_gain(&cb[i], &cb[j]).norm();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expected).abs() < 1e-12);
            }
        }
        for v in &cb[0] {
            assert!((v.re - 0.5).abs() < 1e-15 && v.im.abs() < 1e-15);
        }
    }

    #[test]
    fn pbm_of_codeword_and_zero() {
        let cb = build_codebook(4);
        let r = pbm_of_vector(&cb[0], &cb);
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!((r.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let zero = vec![Complex64::new(0.0, 0.0); 4];
        assert!(pbm_of_vector(&zero, &cb).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn decoding_rules() {
        assert!(!decode_zeta(-0.5));
        assert!(decode_zeta(0.5));
        assert!(decode_zeta(0.0));
        assert_eq!(decode_beam(0.2, 4), 2);
        assert_eq!(decode_beam(-0.999, 4), 0);
        assert_eq!(decode_beam(0.999, 4), 3);
        assert_eq!(decode_beam(1.0, 4), 3);
    }

    #[test]
    fn equal_logits_split_power_evenly() {
        let mut cfg = EnvConfig::full();
        cfg.n_aps = 1;
        let p = decode_power(&cfg, &[0.3; 12]);
        for v in p {
            assert!((v - 0.1 / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_link_sinr() {
        let mut cfg = EnvConfig::desk();
        cfg.n_aps = 1;
        cfg.n_users = 1;
        cfg.n_subbands = 1;
        cfg.n_antennas = 1;
        // noise power 1e-3 W over the subband
        cfg.noise_psd_dbm_hz = 10.0 * (1e-3 / cfg.subband_bandwidth_hz() * 1e3).log10();
        let cb = build_codebook(1);
        let ch = ChannelState {
            path_gains: vec![],
            h: vec![Complex64::new(1.0, 0.0)],
        };
        let act = DecodedAction {
            zeta: vec![true],
            beam_idx: vec![0],
            power: vec![0.1],
        };
        let g = compute_sinr(&cfg, &cb, &ch, &act);
        assert!((g[0] - 5.0).abs() < 1e-9);
        let off = DecodedAction {
            zeta: vec![false],
            ..act
        };
        assert_eq!(compute_sinr(&cfg, &cb, &ch, &off)[0], 0.0);
    }

    #[test]
    fn blocklength_spot_value() {
        let q = gaussian_q_inv(1e-6).unwrap();
        let psi = finite_blocklength_bits(1500.0, q, &[5.0]);
        assert!((psi - 3615.1).abs() < 0.5, "{psi}");
        assert_eq!(finite_blocklength_bits(1500.0, q, &[0.0, 0.0]), 0.0);
        assert!(psi <= shannon_bits(1500.0, &[5.0]));
    }
}
