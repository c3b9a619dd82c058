use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Synthetic multipath channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Number of propagation paths per AP-UE link.
    pub paths: usize,
    /// Angular spread of the paths around the link's center angle, degrees.
    pub angle_spread_deg: f64,
    /// Exponential path-power decay: power of path `l` is proportional to `exp(-l / decay)`.
    pub path_power_decay: f64,
    /// First-order autoregression coefficient of the small-scale fading, in [0, 1).
    pub time_correlation: f64,
    /// Maximum path delay, seconds.
    pub delay_spread_s: f64,
    /// Large-scale gain range per AP-UE link, dB.
    pub path_gain_db_min: f64,
    pub path_gain_db_max: f64,
    /// Seed for the static layout (large-scale gains, angles, delays).
    pub layout_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            paths: 6,
            angle_spread_deg: 20.0,
            path_power_decay: 2.0,
            time_correlation: 0.95,
            delay_spread_s: 1e-6,
            path_gain_db_min: -112.0,
            path_gain_db_max: -98.0,
            layout_seed: 2024,
        }
    }
}

/// Static system description of the cell-free downlink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_aps: usize,
    pub n_users: usize,
    pub n_subbands: usize,
    pub n_antennas: usize,
    pub subcarriers_per_subband: usize,
    pub symbols_per_slot: usize,
    pub p_max_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub block_error_prob: f64,
    /// Mean Poisson packet arrivals per slot per UE.
    pub arrival_rate: f64,
    pub packet_bits_min: u64,
    pub packet_bits_max: u64,
    pub deadline_slots: u32,
    pub buffer_bits: u64,
    /// Slots per episode.
    pub horizon: usize,
    pub subcarrier_spacing_hz: f64,
    pub slot_seconds: f64,
    pub channel: ChannelConfig,
}

impl EnvConfig {
    /// The reduced profile used for end-to-end runs on a workstation.
    pub fn desk() -> Self {
        Self {
            n_aps: 2,
            n_users: 2,
            n_subbands: 2,
            n_antennas: 2,
            subcarriers_per_subband: 20,
            symbols_per_slot: 75,
            p_max_dbm: 20.0,
            noise_psd_dbm_hz: -174.0,
            block_error_prob: 1e-6,
            arrival_rate: 20.0,
            packet_bits_min: 50,
            packet_bits_max: 200,
            deadline_slots: 2,
            buffer_bits: 30_000,
            horizon: 100,
            subcarrier_spacing_hz: 15e3,
            slot_seconds: 5e-3,
            channel: ChannelConfig::default(),
        }
    }

    /// Full-size system: 3 APs x 3 UEs x 4 subbands x 4 antennas, 200-slot episodes.
    pub fn full() -> Self {
        Self {
            n_aps: 3,
            n_users: 3,
            n_subbands: 4,
            n_antennas: 4,
            horizon: 200,
            arrival_rate: 30.0,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_aps", self.n_aps),
            ("n_users", self.n_users),
            ("n_subbands", self.n_subbands),
            ("n_antennas", self.n_antennas),
            ("subcarriers_per_subband", self.subcarriers_per_subband),
            ("symbols_per_slot", self.symbols_per_slot),
            ("horizon", self.horizon),
            ("channel.paths", self.channel.paths),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        let a = self.channel.time_correlation;
        if !(0.0..1.0).contains(&a) {
            return Err(Error::Config(format!("channel.time_correlation {a} outside [0, 1)")));
        }
        if !(self.block_error_prob > 0.0 && self.block_error_prob < 1.0) {
            return Err(Error::Config("block_error_prob must lie in (0, 1)".into()));
        }
        if self.packet_bits_min == 0 || self.packet_bits_min > self.packet_bits_max {
            return Err(Error::Config("packet size range is empty".into()));
        }
        if self.deadline_slots == 0 {
            return Err(Error::Config("deadline_slots must be >= 1".into()));
        }
        if self.arrival_rate < 0.0 {
            return Err(Error::Config("arrival_rate must be non-negative".into()));
        }
        if self.channel.path_gain_db_min > self.channel.path_gain_db_max {
            return Err(Error::Config("path gain range is empty".into()));
        }
        // N * K * C / bandwidth, with bandwidth = K * C * spacing
        let implied = self.symbols_per_slot as f64 / self.subcarrier_spacing_hz;
        if ((implied - self.slot_seconds) / self.slot_seconds).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "slot_seconds {} inconsistent with N / subcarrier spacing = {implied}",
                self.slot_seconds
            )));
        }
        Ok(())
    }

    pub fn p_max_watts(&self) -> f64 {
        10f64.powf((self.p_max_dbm - 30.0) / 10.0)
    }

    pub fn subband_bandwidth_hz(&self) -> f64 {
        self.subcarriers_per_subband as f64 * self.subcarrier_spacing_hz
    }

    /// Noise power over one subband, watts.
    pub fn noise_power_watts(&self) -> f64 {
        10f64.powf((self.noise_psd_dbm_hz - 30.0) / 10.0) * self.subband_bandwidth_hz()
    }

    /// Resource elements per time-frequency unit (C * N).
    pub fn res_per_tfu(&self) -> f64 {
        (self.subcarriers_per_subband * self.symbols_per_slot) as f64
    }

    /// Number of (AP, UE, subband) tuples.
    pub fn n_links(&self) -> usize {
        self.n_aps * self.n_users * self.n_subbands
    }

    pub fn pbm_dim(&self) -> usize {
        self.n_links() * self.n_antennas
    }

    pub fn queue_dim(&self) -> usize {
        2 * self.n_users
    }

    pub fn state_dim(&self) -> usize {
        self.pbm_dim() + self.queue_dim()
    }

    pub fn action_dim(&self) -> usize {
        3 * self.n_links()
    }

    /// Flat index of `(b, u, k)`.
    pub fn link_index(&self, b: usize, u: usize, k: usize) -> usize {
        (b * self.n_users + u) * self.n_subbands + k
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Large systems make the joint transition models expensive to fit.
    pub fn is_large(&self) -> bool {
        2 * self.state_dim() + self.action_dim() > 160
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        EnvConfig::desk().validate().unwrap();
        EnvConfig::full().validate().unwrap();
        assert!(EnvConfig::full().is_large());
        assert!(!EnvConfig::desk().is_large());
    }

    #[test]
    fn dims() {
        let c = EnvConfig::desk();
        assert_eq!(c.pbm_dim(), 16);
        assert_eq!(c.state_dim(), 20);
        assert_eq!(c.action_dim(), 24);
        let p = EnvConfig::full();
        assert_eq!(p.pbm_dim(), 144);
        assert_eq!(p.res_per_tfu(), 1500.0);
    }

    #[test]
    fn noise_power_per_subband() {
        let c = EnvConfig::desk();
        let dbm = 10.0 * (c.noise_power_watts() * 1e3).log10();
        assert!((dbm - (-174.0 + 10.0 * 300e3f64.log10())).abs() < 1e-9);
        assert!((dbm + 119.228_787_452_803_38).abs() < 1e-6);
        assert!((c.p_max_watts() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn slot_time_consistency_checked() {
        let mut c = EnvConfig::desk();
        c.slot_seconds = 1e-3;
        assert!(c.validate().is_err());
        let mut c = EnvConfig::desk();
        c.channel.time_correlation = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = EnvConfig::desk();
        let mut b = EnvConfig::desk();
        assert_eq!(a.hash(), b.hash());
        b.arrival_rate = 31.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
