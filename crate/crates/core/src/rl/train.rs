//! Rollout collection, the alternating primal/dual training loop, and
//! Monte-Carlo evaluation.

use serde::{Deserialize, Serialize};

use super::control::{AgentController, Controller};
use super::ppo::{Agent, RolloutBuffer, Transition, UpdateStats};
use crate::env::{violation_rate, Cmdp};
use crate::error::Result;
use crate::rng::SeededRng;

/// One learning-curve row; serializes to the curve CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub reward_mean: f64,
    pub cost_mean: f64,
    pub lambda: f64,
    pub seed: u64,
}

/// Per-episode summary of a controller run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Mean per-slot reward (bits per joule).
    pub ee: f64,
    /// Mean over users of the episode violation ratio. Falls back to the
    /// mean per-slot cost when the environment reports no packet events.
    pub viol: f64,
    pub cost_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ee_mean: f64,
    pub ee_std: f64,
    pub viol_mean: f64,
    pub viol_std: f64,
    pub episodes: Vec<EpisodeStats>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

struct EpisodeAcc {
    reward: f64,
    cost: f64,
    steps: usize,
    bad: Vec<u64>,
    tx: Vec<u64>,
}

impl EpisodeAcc {
    fn new() -> Self {
        Self {
            reward: 0.0,
            cost: 0.0,
            steps: 0,
            bad: Vec::new(),
            tx: Vec::new(),
        }
    }

    fn add(&mut self, out: &crate::env::StepOutcome) {
        self.reward += out.reward;
        self.cost += out.cost_agg;
        self.steps += 1;
        if self.bad.len() < out.vio.len() {
            self.bad.resize(out.vio.len(), 0);
            self.tx.resize(out.vio.len(), 0);
        }
        for u in 0..out.vio.len() {
            self.bad[u] += out.vio[u] + out.drop[u];
            self.tx[u] += out.tx[u];
        }
    }

    fn finish(&self) -> EpisodeStats {
        let n = self.steps.max(1) as f64;
        let cost_mean = self.cost / n;
        let events: u64 = self.bad.iter().chain(&self.tx).sum();
        let viol = if events == 0 {
            cost_mean
        } else {
            let u = self.bad.len() as f64;
            self.bad
                .iter()
                .zip(&self.tx)
                .map(|(&b, &t)| violation_rate(b, 0, t))
                .sum::<f64>()
                / u
        };
        EpisodeStats {
            ee: self.reward / n,
            viol,
            cost_mean,
        }
    }
}

pub fn run_episode<E: Cmdp + ?Sized, C: Controller + ?Sized>(
    env: &mut E,
    ctrl: &mut C,
    rng: &mut SeededRng,
) -> Result<EpisodeStats> {
    let mut s = env.reset(rng);
    ctrl.reset();
    let mut acc = EpisodeAcc::new();
    for _ in 0..env.horizon() {
        let a = ctrl.act(&s, rng);
        let out = env.step(&a, rng)?;
        ctrl.observe(&out);
        acc.add(&out);
        s = out.next_state;
    }
    Ok(acc.finish())
}

/// Runs `n` episodes; episode `i` draws from stream `i` of `rng`'s seed so
/// results do not depend on earlier episodes' consumption.
pub fn evaluate<E: Cmdp + ?Sized, C: Controller + ?Sized>(
    env: &mut E,
    ctrl: &mut C,
    n: usize,
    rng: &SeededRng,
) -> Result<EvalReport> {
    let mut eps = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng.derive(i as u64);
        eps.push(run_episode(env, ctrl, &mut r)?);
    }
    let ee: Vec<f64> = eps.iter().map(|e| e.ee).collect();
    let vi: Vec<f64> = eps.iter().map(|e| e.viol).collect();
    let (ee_mean, ee_std) = mean_std(&ee);
    let (viol_mean, viol_std) = mean_std(&vi);
    Ok(EvalReport {
        ee_mean,
        ee_std,
        viol_mean,
        viol_std,
        episodes: eps,
    })
}

pub fn evaluate_policy<E: Cmdp + ?Sized>(
    env: &mut E,
    agent: &Agent,
    n: usize,
    deterministic: bool,
    rng: &SeededRng,
) -> Result<EvalReport> {
    let mut c = AgentController { agent, deterministic };
    evaluate(env, &mut c, n, rng)
}

/// Collects one episode into `buf` and returns its summary.
pub fn collect_episode<E: Cmdp + ?Sized>(
    env: &mut E,
    agent: &Agent,
    buf: &mut RolloutBuffer,
    rng: &mut SeededRng,
) -> Result<EpisodeStats> {
    let horizon = env.horizon();
    let mut s = env.reset(rng);
    let mut acc = EpisodeAcc::new();
    for t in 0..horizon {
        let obs = agent.observe(&s);
        let sample = agent.act(&obs, rng);
        let (v_r, v_c) = agent.values(&obs);
        let out = env.step(&sample.action, rng)?;
        acc.add(&out);
        buf.push(Transition {
            obs,
            pre: sample.pre,
            log_prob: sample.log_prob,
            reward: out.reward * agent.cfg.reward_scale,
            cost: out.cost_agg,
            v_r,
            v_c,
            done: t + 1 == horizon,
        })?;
        s = out.next_state;
    }
    Ok(acc.finish())
}

/// Alternates rollouts, PPO updates and dual ascent for `episodes`
/// episodes. `hook` runs after every episode (after the update when one
/// happened), e.g. for checkpointing.
pub fn train_loop<E, H>(
    env: &mut E,
    agent: &mut Agent,
    episodes: usize,
    seed: u64,
    rng: &mut SeededRng,
    mut hook: H,
) -> Result<Vec<CurveRow>>
where
    E: Cmdp + ?Sized,
    H: FnMut(&CurveRow, &Agent) -> Result<()>,
{
    let per = agent.cfg.rollout_episodes;
    let mut buf = RolloutBuffer::new(per * env.horizon());
    let mut rows = Vec::with_capacity(episodes);
    let mut batch_eps = 0;
    let mut batch_cost = 0.0;
    let mut last: Option<UpdateStats> = None;
    for ep in 0..episodes {
        let st = collect_episode(env, agent, &mut buf, rng)?;
        batch_eps += 1;
        batch_cost += st.cost_mean;
        if batch_eps == per || ep + 1 == episodes {
            last = Some(agent.update(&buf, rng)?);
            agent.dual_step(batch_cost / batch_eps as f64);
            buf.clear();
            batch_eps = 0;
            batch_cost = 0.0;
        }
        let row = CurveRow {
            episode: ep + 1,
            reward_mean: st.ee,
            cost_mean: st.cost_mean,
            lambda: agent.dual.lambda,
            seed,
        };
        hook(&row, agent)?;
        rows.push(row);
    }
    if let Some(s) = last {
        log::debug!("final update: {s:?}");
    }
    Ok(rows)
}
