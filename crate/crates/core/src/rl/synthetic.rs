//! A two-state, two-action constrained MDP small enough to solve by
//! enumerating deterministic policies.
//!
//! Action `a[0] >= 0` stays, otherwise the state flips. Staying in state 1
//! pays well; switching out of state 1 pays best but incurs unit cost.

use crate::env::{Cmdp, CmdpState, StepOutcome};
use crate::error::{check_dim, Result};
use crate::rng::SeededRng;

pub const REWARD: [[f64; 2]; 2] = [[0.3, 0.0], [0.6, 1.5]];
pub const COST: [[f64; 2]; 2] = [[0.0, 0.0], [0.0, 1.0]];

#[derive(Debug, Clone)]
pub struct TwoStateCmdp {
    pub horizon: usize,
    state: usize,
}

impl TwoStateCmdp {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, state: 0 }
    }

    fn obs(&self) -> CmdpState {
        let mut r = vec![0.0; 2];
        r[self.state] = 1.0;
        CmdpState {
            r,
            q_buf: vec![],
            q_urg: vec![],
        }
    }

    /// Mean per-step `(reward, cost)` of the deterministic policy mapping
    /// state `s` to action `policy[s]` (0 stay, 1 switch).
    pub fn policy_value(&self, policy: [usize; 2]) -> (f64, f64) {
        let (mut s, mut r, mut c) = (0usize, 0.0, 0.0);
        for _ in 0..self.horizon {
            let a = policy[s];
            r += REWARD[s][a];
            c += COST[s][a];
            if a == 1 {
                s = 1 - s;
            }
        }
        let n = self.horizon as f64;
        (r / n, c / n)
    }

    /// Best mean reward among deterministic policies with mean cost `<= d`.
    pub fn best_constrained(&self, d: f64) -> (f64, [usize; 2]) {
        let mut best = (f64::NEG_INFINITY, [0, 0]);
        for a0 in 0..2 {
            for a1 in 0..2 {
                let (r, c) = self.policy_value([a0, a1]);
                if c <= d && r > best.0 {
                    best = (r, [a0, a1]);
                }
            }
        }
        best
    }
}

impl Cmdp for TwoStateCmdp {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, _rng: &mut SeededRng) -> CmdpState {
        self.state = 0;
        self.obs()
    }

    fn step(&mut self, action: &[f64], _rng: &mut SeededRng) -> Result<StepOutcome> {
        check_dim(1, action.len(), "synthetic action")?;
        let a = usize::from(action[0] < 0.0);
        let s = self.state;
        if a == 1 {
            self.state = 1 - s;
        }
        Ok(StepOutcome {
            next_state: self.obs(),
            reward: REWARD[s][a],
            cost_per_user: vec![COST[s][a]],
            cost_agg: COST[s][a],
            vio: vec![],
            drop: vec![],
            tx: vec![],
            bits_served: vec![],
        })
    }
}
