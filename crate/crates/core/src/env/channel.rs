//! Synthetic geometric multipath channel with first-order temporal correlation.
//!
//! Each AP-UE link has a static layout: a large-scale gain, `L` path angles
//! and delays, and an exponential path-power profile. Small-scale fading is
//! the vector of complex path gains, which evolves as an AR(1) process whose
//! stationary law equals the reset law.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::config::EnvConfig;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    pub large_scale_gain: f64,
    pub angles_rad: Vec<f64>,
    pub delays_s: Vec<f64>,
    /// Per-path variance of the complex gain, summing to one.
    pub path_powers: Vec<f64>,
}

/// Static geometry of every (AP, UE) link, drawn from the layout seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLayout {
    pub links: Vec<LinkGeometry>,
    /// Precomputed response of path `l` on subband `k` at antenna `i`,
    /// indexed `[link][k][l][i]`.
    responses: Vec<Vec<Vec<Vec<Complex64>>>>,
}

impl ChannelLayout {
    pub fn new(cfg: &EnvConfig) -> Self {
        let ch = &cfg.channel;
        let mut rng = SeededRng::new(ch.layout_seed, 0x1a70);
        let profile: Vec<f64> = (0..ch.paths)
            .map(|l| (-(l as f64) / ch.path_power_decay.max(1e-9)).exp())
            .collect();
        let total: f64 = profile.iter().sum();
        let path_powers: Vec<f64> = profile.iter().map(|p| p / total).collect();

        let mut links = Vec::with_capacity(cfg.n_aps * cfg.n_users);
        for _ in 0..cfg.n_aps * cfg.n_users {
            let gain_db = ch.path_gain_db_min + (ch.path_gain_db_max - ch.path_gain_db_min) * rng.uniform();
            let center = (rng.uniform() - 0.5) * 120f64.to_radians();
            let angles_rad = (0..ch.paths)
                .map(|_| center + (rng.uniform() - 0.5) * ch.angle_spread_deg.to_radians())
                .collect();
            let delays_s = (0..ch.paths).map(|_| rng.uniform() * ch.delay_spread_s).collect();
            links.push(LinkGeometry {
                large_scale_gain: 10f64.powf(gain_db / 10.0),
                angles_rad,
                delays_s,
                path_powers: path_powers.clone(),
            });
        }

        let sb_hz = cfg.subband_bandwidth_hz();
        let responses = links
            .iter()
            .map(|link| {
                (0..cfg.n_subbands)
                    .map(|k| {
                        (0..ch.paths)
                            .map(|l| {
                                let phase = -2.0 * PI * k as f64 * sb_hz * link.delays_s[l];
                                let rot = Complex64::from_polar(1.0, phase);
                                let s = link.angles_rad[l].sin();
                                (0..cfg.n_antennas)
                                    .map(|i| rot * Complex64::from_polar(1.0, PI * i as f64 * s))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { links, responses }
    }
}

/// Per-link small-scale path gains plus the derived antenna-domain channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// Complex path gains indexed `[link][l]`, link = b * U + u.
    pub path_gains: Vec<Vec<Complex64>>,
    /// `h[b][u][k]` flattened: index `link_index(b,u,k) * M + i`.
    pub h: Vec<Complex64>,
}

impl ChannelState {
    /// Channel vector of `(b, u, k)`.
    pub fn vector(&self, cfg: &EnvConfig, b: usize, u: usize, k: usize) -> &[Complex64] {
        let m = cfg.n_antennas;
        let idx = cfg.link_index(b, u, k) * m;
        &self.h[idx..idx + m]
    }
}

fn draw_path_gains(layout: &ChannelLayout, rng: &mut SeededRng) -> Vec<Vec<Complex64>> {
    layout
        .links
        .iter()
        .map(|link| {
            link.path_powers
                .iter()
                .map(|p| {
                    let s = (p / 2.0).sqrt();
                    Complex64::new(s * rng.normal(), s * rng.normal())
                })
                .collect()
        })
        .collect()
}

fn synthesize(cfg: &EnvConfig, layout: &ChannelLayout, gains: &[Vec<Complex64>]) -> Vec<Complex64> {
    let m = cfg.n_antennas;
    let mut h = vec![Complex64::new(0.0, 0.0); cfg.pbm_dim()];
    for b in 0..cfg.n_aps {
        for u in 0..cfg.n_users {
            let link = b * cfg.n_users + u;
            let amp = layout.links[link].large_scale_gain.sqrt();
            for k in 0..cfg.n_subbands {
                let base = cfg.link_index(b, u, k) * m;
                for (l, g) in gains[link].iter().enumerate() {
                    let resp = &layout.responses[link][k][l];
                    for i in 0..m {
                        h[base + i] += amp * g * resp[i];
                    }
                }
            }
        }
    }
    h
}

pub fn channel_reset(cfg: &EnvConfig, layout: &ChannelLayout, rng: &mut SeededRng) -> ChannelState {
    let path_gains = draw_path_gains(layout, rng);
    let h = synthesize(cfg, layout, &path_gains);
    ChannelState { path_gains, h }
}

/// `g' = a g + sqrt(1 - a^2) w` with `w` drawn from the stationary law.
pub fn channel_advance(
    cfg: &EnvConfig,
    layout: &ChannelLayout,
    ch: &ChannelState,
    rng: &mut SeededRng,
) -> ChannelState {
    let a = cfg.channel.time_correlation;
    let b = (1.0 - a * a).max(0.0).sqrt();
    let innovation = draw_path_gains(layout, rng);
    let path_gains: Vec<Vec<Complex64>> = ch
        .path_gains
        .iter()
        .zip(innovation)
        .map(|(old, new)| old.iter().zip(new).map(|(g, w)| g * a + w * b).collect())
        .collect();
    let h = synthesize(cfg, layout, &path_gains);
    ChannelState { path_gains, h }
}
