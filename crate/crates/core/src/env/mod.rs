//! The real constrained MDP: a cell-free MIMO-OFDM downlink with per-UE
//! packet queues.

pub mod channel;
pub mod config;
pub mod dataset;
pub mod phy;
pub mod queue;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use channel::{channel_advance, channel_reset, ChannelLayout, ChannelState};
pub use config::{ChannelConfig, EnvConfig};
pub use dataset::{Dataset, DatasetHeader, TransitionRecord};
pub use phy::{build_codebook, compute_bits, compute_pbm, compute_sinr, decode_action, DecodedAction};
pub use queue::{queue_step, Packet, ServiceReport, SlotCounters, UeQueue};

use crate::error::{check_dim, Result};
use crate::mathcore::gaussian_q_inv;
use crate::rng::SeededRng;

/// Observation: beam-domain channel magnitudes plus queue summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmdpState {
    pub r: Vec<f64>,
    pub q_buf: Vec<u64>,
    pub q_urg: Vec<u64>,
}

impl CmdpState {
    pub fn dim(&self) -> usize {
        self.r.len() + self.q_buf.len() + self.q_urg.len()
    }

    /// `r`, then `q_buf`, then `q_urg`, as reals.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.r);
        v.extend(self.q_buf.iter().map(|&x| x as f64));
        v.extend(self.q_urg.iter().map(|&x| x as f64));
        v
    }

    /// Inverse of [`CmdpState::to_vec`]; queue entries are rounded, clamped
    /// at zero, and `q_urg` is capped by `q_buf`.
    pub fn from_vec(v: &[f64], n_users: usize) -> Result<Self> {
        let q_len = 2 * n_users;
        if v.len() < q_len {
            return Err(crate::Error::DimensionMismatch {
                expected: q_len,
                got: v.len(),
                context: "state vector",
            });
        }
        let r_len = v.len() - q_len;
        let r = v[..r_len].iter().map(|x| x.max(0.0)).collect();
        let round = |x: f64| -> u64 {
            if x.is_finite() && x > 0.0 {
                x.round() as u64
            } else {
                0
            }
        };
        let q_buf: Vec<u64> = v[r_len..r_len + n_users].iter().map(|&x| round(x)).collect();
        let q_urg = v[r_len + n_users..]
            .iter()
            .zip(&q_buf)
            .map(|(&x, &b)| round(x).min(b))
            .collect();
        Ok(Self { r, q_buf, q_urg })
    }
}

/// Policy output, every entry in (-1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    pub zeta_hat: Vec<f64>,
    pub i_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
}

impl RawAction {
    /// Splits a flat vector laid out as `[zeta_hat | i_hat | p_hat]`.
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        let n = v.len() / 3;
        check_dim(3 * n, v.len(), "flat action")?;
        Ok(Self {
            zeta_hat: v[..n].to_vec(),
            i_hat: v[n..2 * n].to_vec(),
            p_hat: v[2 * n..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.zeta_hat.len());
        v.extend_from_slice(&self.zeta_hat);
        v.extend_from_slice(&self.i_hat);
        v.extend_from_slice(&self.p_hat);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: CmdpState,
    /// Bits per joule.
    pub reward: f64,
    pub cost_per_user: Vec<f64>,
    pub cost_agg: f64,
    pub vio: Vec<u64>,
    pub drop: Vec<u64>,
    pub tx: Vec<u64>,
    pub bits_served: Vec<f64>,
}

/// The reset/step contract shared by the real environment, the learned
/// virtual environment, and synthetic test problems.
pub trait Cmdp {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut SeededRng) -> CmdpState;
    /// `action` is the flat `(-1, 1)` vector produced by a policy.
    fn step(&mut self, action: &[f64], rng: &mut SeededRng) -> Result<StepOutcome>;
}

/// Single-user cost `(vio + drop) / (vio + drop + tx)`, zero without events.
pub fn violation_rate(vio: u64, drop: u64, tx: u64) -> f64 {
    let bad = vio + drop;
    let total = bad + tx;
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

/// Cumulative packet accounting since the last reset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PacketLedger {
    pub arrivals: Vec<u64>,
    pub tx: Vec<u64>,
    pub vio: Vec<u64>,
    pub drop: Vec<u64>,
}

/// The real environment instance: owns the channel and queue state.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    layout: ChannelLayout,
    codebook: Vec<Vec<Complex64>>,
    q_inv_eps: f64,
    channel: Option<ChannelState>,
    queues: Vec<UeQueue>,
    slot: u64,
    ledger: PacketLedger,
    last_decoded: Option<DecodedAction>,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = ChannelLayout::new(&cfg);
        let codebook = build_codebook(cfg.n_antennas);
        let q_inv_eps = gaussian_q_inv(cfg.block_error_prob)?;
        let queues = vec![UeQueue::default(); cfg.n_users];
        Ok(Self {
            cfg,
            layout,
            codebook,
            q_inv_eps,
            channel: None,
            queues,
            slot: 0,
            ledger: PacketLedger::default(),
            last_decoded: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    pub fn codebook(&self) -> &[Vec<Complex64>] {
        &self.codebook
    }

    pub fn queues(&self) -> &[UeQueue] {
        &self.queues
    }

    pub fn ledger(&self) -> &PacketLedger {
        &self.ledger
    }

    pub fn channel(&self) -> Option<&ChannelState> {
        self.channel.as_ref()
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn last_decoded(&self) -> Option<&DecodedAction> {
        self.last_decoded.as_ref()
    }

    fn assemble_state(&self) -> CmdpState {
        let ch = self.channel.as_ref().expect("environment was reset");
        let next_slot = self.slot + 1;
        CmdpState {
            r: compute_pbm(&self.cfg, &self.codebook, ch),
            q_buf: self.queues.iter().map(|q| q.len() as u64).collect(),
            q_urg: self
                .queues
                .iter()
                .map(|q| q.urgent(next_slot, self.cfg.deadline_slots) as u64)
                .collect(),
        }
    }

    /// Current observation.
    pub fn state(&self) -> CmdpState {
        self.assemble_state()
    }

    /// Runs one slot given an already decoded action.
    pub fn step_decoded(&mut self, act: DecodedAction, rng: &mut SeededRng) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        let ch = self
            .channel
            .as_ref()
            .ok_or_else(|| crate::Error::InvalidArgument("step before reset".into()))?;
        let gamma = compute_sinr(cfg, &self.codebook, ch, &act);
        let psi: Vec<f64> = gamma
            .chunks(cfg.n_subbands)
            .map(|row| phy::finite_blocklength_bits(cfg.res_per_tfu(), self.q_inv_eps, row))
            .collect();
        let energy: f64 = act.scheduled_power(cfg).iter().sum::<f64>() * cfg.slot_seconds;
        let reward = if energy > 0.0 {
            psi.iter().sum::<f64>() / energy
        } else {
            0.0
        };

        let slot = self.slot + 1;
        let reports = queue_step(cfg, &mut self.queues, &psi, slot, rng);
        let next_channel = channel_advance(cfg, &self.layout, ch, rng);
        self.channel = Some(next_channel);
        self.slot = slot;

        let mut out = StepOutcome {
            next_state: self.assemble_state(),
            reward,
            cost_per_user: Vec::with_capacity(reports.len()),
            cost_agg: 0.0,
            vio: Vec::with_capacity(reports.len()),
            drop: Vec::with_capacity(reports.len()),
            tx: Vec::with_capacity(reports.len()),
            bits_served: Vec::with_capacity(reports.len()),
        };
        for (u, rep) in reports.iter().enumerate() {
            let c = rep.counters;
            out.cost_per_user.push(violation_rate(c.vio, c.drop, c.tx));
            out.vio.push(c.vio);
            out.drop.push(c.drop);
            out.tx.push(c.tx);
            out.bits_served.push(rep.bits_served);
            self.ledger.arrivals[u] += c.arrivals;
            self.ledger.tx[u] += c.tx;
            self.ledger.vio[u] += c.vio;
            self.ledger.drop[u] += c.drop;
        }
        out.cost_agg = out.cost_per_user.iter().sum::<f64>() / out.cost_per_user.len() as f64;
        self.last_decoded = Some(act);
        Ok(out)
    }

    pub fn step_raw(&mut self, raw: &RawAction, rng: &mut SeededRng) -> Result<StepOutcome> {
        let act = decode_action(&self.cfg, raw)?;
        self.step_decoded(act, rng)
    }

    /// Fresh channel and queues seeded with one slot of arrivals.
    pub fn reset_env(&mut self, rng: &mut SeededRng) -> CmdpState {
        let u = self.cfg.n_users;
        self.channel = Some(channel_reset(&self.cfg, &self.layout, rng));
        self.queues = vec![UeQueue::default(); u];
        self.slot = 0;
        self.ledger = PacketLedger {
            arrivals: vec![0; u],
            tx: vec![0; u],
            vio: vec![0; u],
            drop: vec![0; u],
        };
        for (i, q) in self.queues.iter_mut().enumerate() {
            let sizes = queue::draw_arrivals(&self.cfg, rng);
            let mut rep = ServiceReport::default();
            q.admit(&sizes, 0, self.cfg.buffer_bits, &mut rep);
            self.ledger.arrivals[i] += rep.counters.arrivals;
            self.ledger.drop[i] += rep.counters.drop;
        }
        self.last_decoded = None;
        self.assemble_state()
    }
}

impl Cmdp for Env {
    fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.cfg.action_dim()
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, rng: &mut SeededRng) -> CmdpState {
        self.reset_env(rng)
    }

    fn step(&mut self, action: &[f64], rng: &mut SeededRng) -> Result<StepOutcome> {
        check_dim(self.cfg.action_dim(), action.len(), "action")?;
        let raw = RawAction::from_flat(action)?;
        self.step_raw(&raw, rng)
    }
}
