//! Per-UE packet buffers with FIFO service, deadline expiry, and tail drop.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub arrival_slot: u64,
    pub size_bits: u64,
    pub remaining_bits: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UeQueue {
    pub packets: VecDeque<Packet>,
    pub total_bits: f64,
}

/// Per-slot packet events for one UE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCounters {
    pub tx: u64,
    pub vio: u64,
    pub drop: u64,
    pub arrivals: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceReport {
    pub counters: SlotCounters,
    pub bits_served: f64,
    /// Delay in slots of every packet fully drained this slot.
    pub delays: Vec<u64>,
}

impl UeQueue {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Drains up to `bits` in FIFO order during `slot`.
    pub fn serve(&mut self, bits: f64, slot: u64, report: &mut ServiceReport) {
        let mut budget = bits.max(0.0);
        while budget > 0.0 {
            let Some(head) = self.packets.front_mut() else {
                break;
            };
            if head.remaining_bits <= budget {
                budget -= head.remaining_bits;
                report.bits_served += head.remaining_bits;
                self.total_bits -= head.remaining_bits;
                report.delays.push(slot - head.arrival_slot);
                report.counters.tx += 1;
                self.packets.pop_front();
            } else {
                head.remaining_bits -= budget;
                self.total_bits -= budget;
                report.bits_served += budget;
                budget = 0.0;
            }
        }
        if self.packets.is_empty() {
            self.total_bits = 0.0;
        }
    }

    /// Removes packets that can no longer meet the deadline in the next slot.
    pub fn expire(&mut self, slot: u64, deadline: u32, report: &mut ServiceReport) {
        let before = self.packets.len();
        let mut removed_bits = 0.0;
        self.packets.retain(|p| {
            let age = slot + 1 - p.arrival_slot;
            if age > deadline as u64 {
                removed_bits += p.remaining_bits;
                false
            } else {
                true
            }
        });
        self.total_bits -= removed_bits;
        if self.packets.is_empty() {
            self.total_bits = 0.0;
        }
        report.counters.vio += (before - self.packets.len()) as u64;
    }

    /// Tail-drop admission: once one packet does not fit, the rest of the
    /// slot's arrivals are dropped as well.
    pub fn admit(&mut self, sizes: &[u64], slot: u64, capacity: u64, report: &mut ServiceReport) {
        report.counters.arrivals += sizes.len() as u64;
        let mut full = false;
        for &size in sizes {
            if !full && self.total_bits + size as f64 <= capacity as f64 {
                self.total_bits += size as f64;
                self.packets.push_back(Packet {
                    arrival_slot: slot,
                    size_bits: size,
                    remaining_bits: size as f64,
                });
            } else {
                full = true;
                report.counters.drop += 1;
            }
        }
    }

    /// Packets whose last on-time slot is `next_slot`.
    pub fn urgent(&self, next_slot: u64, deadline: u32) -> usize {
        self.packets
            .iter()
            .filter(|p| p.arrival_slot + deadline as u64 <= next_slot)
            .count()
    }
}

pub fn draw_arrivals(cfg: &EnvConfig, rng: &mut SeededRng) -> Vec<u64> {
    let n = rng.poisson(cfg.arrival_rate);
    (0..n)
        .map(|_| rng.uniform_int(cfg.packet_bits_min, cfg.packet_bits_max))
        .collect()
}

/// One slot of queue dynamics for every UE: serve, expire, then admit arrivals.
pub fn queue_step(
    cfg: &EnvConfig,
    queues: &mut [UeQueue],
    psi: &[f64],
    slot: u64,
    rng: &mut SeededRng,
) -> Vec<ServiceReport> {
    queues
        .iter_mut()
        .zip(psi)
        .map(|(q, &bits)| {
            let mut report = ServiceReport::default();
            q.serve(bits, slot, &mut report);
            q.expire(slot, cfg.deadline_slots, &mut report);
            let sizes = draw_arrivals(cfg, rng);
            q.admit(&sizes, slot, cfg.buffer_bits, &mut report);
            report
        })
        .collect()
}
