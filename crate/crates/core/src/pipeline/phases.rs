//! The experiment phases. Each reads its inputs from and writes its
//! artifacts to one output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{check_meta, record, write_csv, write_csv_tagged, write_json, MetricsLog};
use super::config::ExperimentConfig;
use crate::env::{Cmdp, Dataset, DatasetHeader, Env, TransitionRecord};
use crate::error::{check_dim, Error, Result};
use crate::genmodel::{fit_virtual_cmdp, run_halfmoons, FidelityReport, HalfMoonsReport, VirtualCmdp, VirtualEnv};
use crate::rl::{
    behavior_policy_uniform, evaluate, evaluate_policy, train_loop, Agent, AgentController, CurveRow, EvalReport,
    LyapunovController, ObsNormalizer, PolicyCheckpoint, UniformController,
};
use crate::rng::SeededRng;

/// File names inside the output directory.
#[derive(Debug, Clone)]
pub struct OutLayout {
    pub root: PathBuf,
}

impl OutLayout {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    fn sub(&self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        std::fs::create_dir_all(&p)?;
        Ok(p)
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.bin")
    }

    pub fn bundle(&self) -> PathBuf {
        self.root.join("virtual")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn pretrain(&self) -> Result<PathBuf> {
        self.sub("pretrain")
    }

    pub fn pretrained_policy(&self) -> PathBuf {
        self.root.join("pretrain").join("policy.json")
    }

    pub fn finetune(&self, arm: &str) -> Result<PathBuf> {
        self.sub(&format!("finetune/{arm}"))
    }

    pub fn halfmoons(&self) -> Result<PathBuf> {
        self.sub("halfmoons")
    }
}

#[derive(Debug, Clone, Serialize)]
struct CoverageRow {
    column: String,
    min: f64,
    max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CollectSummary {
    pub tuples: usize,
    pub episodes: usize,
    pub reward_min_positive: f64,
    pub reward_max: f64,
    /// log10(max / smallest positive reward).
    pub reward_decades: f64,
    pub cost_mean: f64,
}

/// Quarter-decade bins over positive values, plus a `[0, 0]` bin for zeros.
pub fn log_histogram(values: &[f64]) -> Vec<HistRow> {
    let zeros = values.iter().filter(|&&v| v <= 0.0).count();
    let mut rows = vec![HistRow {
        bin_lo: 0.0,
        bin_hi: 0.0,
        count: zeros,
    }];
    let pos: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    if pos.is_empty() {
        return rows;
    }
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min).log10();
    let hi = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10();
    let start = (lo * 4.0).floor() / 4.0;
    let n = (((hi - start) * 4.0).floor() as usize) + 1;
    let mut counts = vec![0usize; n];
    for v in &pos {
        let i = (((v.log10() - start) * 4.0).floor() as usize).min(n - 1);
        counts[i] += 1;
    }
    rows.extend(counts.into_iter().enumerate().map(|(i, count)| HistRow {
        bin_lo: 10f64.powf(start + i as f64 / 4.0),
        bin_hi: 10f64.powf(start + (i + 1) as f64 / 4.0),
        count,
    }));
    rows
}

pub fn linear_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistRow> {
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v - lo) / w).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistRow {
            bin_lo: lo + i as f64 * w,
            bin_hi: lo + (i + 1) as f64 * w,
            count,
        })
        .collect()
}

/// Runs the uniform behavior policy until exactly `collect.tuples`
/// transitions are recorded.
pub fn collect_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let env_cfg = &cfg.env;
    let mut env = Env::new(env_cfg.clone())?;
    let mut rng = SeededRng::new(cfg.seed, 0xc011);
    let mut ds = Dataset::new(DatasetHeader {
        state_dim: env_cfg.state_dim(),
        action_dim: env_cfg.action_dim(),
        n_users: env_cfg.n_users,
        episode_len: cfg.collect.episode_len,
        env_hash: env_cfg.hash(),
    });
    'outer: loop {
        let mut s = env.reset(&mut rng);
        for _ in 0..cfg.collect.episode_len {
            if ds.len() == cfg.collect.tuples {
                break 'outer;
            }
            let a = behavior_policy_uniform(env_cfg.action_dim(), &mut rng);
            let out = env.step(&a, &mut rng)?;
            let next = out.next_state.to_vec();
            ds.push(TransitionRecord {
                state: s.to_vec(),
                action: a,
                reward: out.reward,
                cost: out.cost_agg,
                cost_per_user: out.cost_per_user,
                next_state: next,
            })?;
            s = out.next_state;
        }
    }
    Ok(ds)
}

pub fn cmd_collect(cfg: &ExperimentConfig, out: &OutLayout) -> Result<CollectSummary> {
    let ds = collect_dataset(cfg)?;
    ds.save(&out.dataset())?;
    let hash = cfg.env_hash();

    let mut cov = Vec::new();
    let dims = [("s", cfg.env.state_dim()), ("a", cfg.env.action_dim())];
    for (kind, d) in dims {
        for k in 0..d {
            let col = ds
                .records
                .iter()
                .map(|r| if kind == "s" { r.state[k] } else { r.action[k] });
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            cov.push(CoverageRow {
                column: format!("{kind}{k}"),
                min: lo,
                max: hi,
            });
        }
    }
    write_csv_tagged(&out.root.join("coverage.csv"), &cov, &hash, "coverage")?;
    let rewards: Vec<f64> = ds.records.iter().map(|r| r.reward).collect();
    let costs: Vec<f64> = ds.records.iter().map(|r| r.cost).collect();
    write_csv_tagged(
        &out.root.join("reward_hist.csv"),
        &log_histogram(&rewards),
        &hash,
        "reward-histogram",
    )?;
    write_csv_tagged(
        &out.root.join("cost_hist.csv"),
        &linear_histogram(&costs, 0.0, 1.0, 10),
        &hash,
        "cost-histogram",
    )?;

    let pos_min = rewards
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let max = rewards.iter().copied().fold(0.0, f64::max);
    Ok(CollectSummary {
        tuples: ds.len(),
        episodes: ds.len().div_ceil(cfg.collect.episode_len),
        reward_min_positive: pos_min,
        reward_max: max,
        reward_decades: if pos_min.is_finite() && max > 0.0 {
            (max / pos_min).log10()
        } else {
            0.0
        },
        cost_mean: costs.iter().sum::<f64>() / costs.len() as f64,
    })
}

/// One line of the fidelity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub metric: String,
    pub train: Option<f64>,
    pub test: Option<f64>,
}

pub fn report_rows(rep: &FidelityReport) -> Vec<ReportRow> {
    let row = |model: &str, metric: &str, train: Option<f64>, test: Option<f64>| ReportRow {
        model: model.into(),
        metric: metric.into(),
        train,
        test,
    };
    let mut rows = Vec::new();
    for r in &rep.regressors {
        let m = format!("{}_{}", r.model, r.target);
        rows.push(row(&m, "mae", Some(r.report.train_mae), Some(r.report.test_mae)));
        rows.push(row(&m, "bias", None, Some(r.report.test_bias)));
        rows.push(row(&m, "params", None, Some(r.params as f64)));
    }
    rows.push(row("init_gmm", "mmd2", None, Some(rep.init_mmd)));
    rows.push(row(
        "init_gmm",
        "mmd2_real_vs_real",
        None,
        Some(rep.init_mmd_calibration),
    ));
    let t = &rep.transition;
    rows.push(row("transition_r", "nmae_single", None, Some(t.r_mae_single)));
    rows.push(row("transition_r", "nmae_avg", None, Some(t.r_mae_avg)));
    rows.push(row("transition_q", "nmae_single", None, Some(t.q_mae_single)));
    rows.push(row("transition_q", "nmae_avg", None, Some(t.q_mae_avg)));
    rows.push(row("transition_r", "credible_rate", None, Some(t.r_credible_rate)));
    rows.push(row("transition_q", "credible_rate", None, Some(t.q_credible_rate)));
    rows
}

pub fn cmd_fit(cfg: &ExperimentConfig, out: &OutLayout) -> Result<FidelityReport> {
    let ds = Dataset::load(&out.dataset())?;
    let fit_cfg = crate::genmodel::FitConfig {
        seed: cfg.seed,
        cost_threshold: cfg.ppo.cost_threshold,
        ..cfg.fit.clone()
    };
    let (model, report) = fit_virtual_cmdp(&ds, &cfg.env, &fit_cfg)?;
    model.save(&out.bundle())?;
    let hash = cfg.env_hash();
    write_csv_tagged(
        &out.root.join("fit_report.csv"),
        &report_rows(&report),
        &hash,
        "fit-report",
    )?;
    write_json(&out.root.join("fit_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub episode: usize,
    pub ee_mean: f64,
    pub ee_std: f64,
    pub viol_mean: f64,
    pub viol_std: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainSummary {
    pub curves: Vec<CurveRow>,
    pub snapshots: Vec<SnapshotRow>,
    pub policy: PathBuf,
}

fn new_agent(cfg: &ExperimentConfig, seed: u64) -> Result<Agent> {
    let e = &cfg.env;
    Agent::new(
        e.state_dim(),
        e.action_dim(),
        ObsNormalizer::from_env(e),
        cfg.ppo.clone(),
        &mut SeededRng::new(seed, 0xa9e),
    )
}

/// PPO-Lagrangian on the virtual CMDP with periodic checkpoints, each
/// scored in the real environment. Training continues from every
/// evaluated snapshot.
pub fn cmd_pretrain(cfg: &ExperimentConfig, out: &OutLayout) -> Result<PretrainSummary> {
    let model = Arc::new(VirtualCmdp::load(&out.bundle(), &cfg.env)?);
    let mut venv = VirtualEnv::new(model);
    let dir = out.pretrain()?;
    let hash = cfg.env_hash();
    let seed = cfg.seed;
    let mut agent = new_agent(cfg, seed)?;
    let mut rng = SeededRng::new(seed, 0x9e7);
    let mut real = Env::new(cfg.env.clone())?;
    let mut snapshots = Vec::new();
    let mut log = MetricsLog::open(&out.metrics())?;
    log.restart("pretrain", seed)?;
    let curves = train_loop(
        &mut venv,
        &mut agent,
        cfg.pretrain_episodes,
        seed,
        &mut rng,
        |row, a| {
            log.append(&record(
                "pretrain",
                seed,
                row.episode,
                &[
                    ("reward_mean", row.reward_mean),
                    ("cost_mean", row.cost_mean),
                    ("lambda", row.lambda),
                ],
            ))?;
            if row.episode % cfg.checkpoint_every == 0 {
                PolicyCheckpoint::from_agent(a, Some(hash.clone()), row.episode)
                    .save(&dir.join(format!("policy_ep{}.json", row.episode)))?;
                if cfg.snapshot_eval_episodes > 0 {
                    let r = evaluate_policy(
                        &mut real,
                        a,
                        cfg.snapshot_eval_episodes,
                        cfg.ppo.deterministic_eval,
                        &SeededRng::new(seed, 0x5a9),
                    )?;
                    snapshots.push(SnapshotRow {
                        episode: row.episode,
                        ee_mean: r.ee_mean,
                        ee_std: r.ee_std,
                        viol_mean: r.viol_mean,
                        viol_std: r.viol_std,
                    });
                }
            }
            Ok(())
        },
    )?;
    let policy = out.pretrained_policy();
    PolicyCheckpoint::from_agent(&agent, Some(hash.clone()), cfg.pretrain_episodes).save(&policy)?;
    write_csv_tagged(&dir.join("curves.csv"), &curves, &hash, "pretrain-curves")?;
    write_csv_tagged(&dir.join("snapshots.csv"), &snapshots, &hash, "pretrain-snapshots")?;
    Ok(PretrainSummary {
        curves,
        snapshots,
        policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCurveRow {
    pub episode: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub lambda_mean: f64,
    pub seeds: usize,
}

pub fn mean_curve(runs: &[Vec<CurveRow>]) -> Vec<MeanCurveRow> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let ms = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (m, var.sqrt())
    };
    (0..len)
        .map(|i| {
            let rw: Vec<f64> = runs.iter().map(|r| r[i].reward_mean).collect();
            let cs: Vec<f64> = runs.iter().map(|r| r[i].cost_mean).collect();
            let lm: Vec<f64> = runs.iter().map(|r| r[i].lambda).collect();
            let (reward_mean, reward_std) = ms(&rw);
            let (cost_mean, cost_std) = ms(&cs);
            MeanCurveRow {
                episode: runs[0][i].episode,
                reward_mean,
                reward_std,
                cost_mean,
                cost_std,
                lambda_mean: ms(&lm).0,
                seeds: runs.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FinetuneSummary {
    pub arm: String,
    pub seeds: Vec<u64>,
    pub curves: Vec<Vec<CurveRow>>,
    pub mean: Vec<MeanCurveRow>,
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<PolicyCheckpoint> {
    let ck = PolicyCheckpoint::load(path)?;
    ck.check_env(&cfg.env_hash())?;
    check_dim(cfg.env.state_dim(), ck.spec.state_dim, "policy state dim")?;
    check_dim(cfg.env.action_dim(), ck.spec.action_dim, "policy action dim")?;
    Ok(ck)
}

/// Trains on the real environment for every configured seed, warm-started
/// from `policy` when given. Without a policy this is the from-scratch arm.
pub fn cmd_finetune(cfg: &ExperimentConfig, out: &OutLayout, policy: Option<&Path>) -> Result<FinetuneSummary> {
    let ck = policy.map(|p| load_checkpoint(cfg, p)).transpose()?;
    let arm = if ck.is_some() { "pretrained" } else { "scratch" };
    let dir = out.finetune(arm)?;
    let hash = cfg.env_hash();
    let runs: Vec<(Vec<CurveRow>, PolicyCheckpoint)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut agent = match &ck {
                Some(c) => c.to_agent(Some(cfg.ppo.clone()))?,
                None => new_agent(cfg, seed)?,
            };
            let mut env = Env::new(cfg.env.clone())?;
            let mut rng = SeededRng::new(seed, 0xf1e);
            let rows = train_loop(&mut env, &mut agent, cfg.finetune_episodes, seed, &mut rng, |_, _| {
                Ok(())
            })?;
            Ok((
                rows,
                PolicyCheckpoint::from_agent(&agent, Some(hash.clone()), cfg.finetune_episodes),
            ))
        })
        .collect::<Result<_>>()?;
    let mut log = MetricsLog::open(&out.metrics())?;
    let phase = format!("finetune-{arm}");
    for (&seed, (rows, pol)) in cfg.seeds.iter().zip(&runs) {
        log.restart(&phase, seed)?;
        write_csv_tagged(&dir.join(format!("curves_seed{seed}.csv")), rows, &hash, &phase)?;
        pol.save(&dir.join(format!("policy_seed{seed}.json")))?;
        for r in rows {
            log.append(&record(
                &phase,
                seed,
                r.episode,
                &[
                    ("reward_mean", r.reward_mean),
                    ("cost_mean", r.cost_mean),
                    ("lambda", r.lambda),
                ],
            ))?;
        }
    }
    let curves: Vec<Vec<CurveRow>> = runs.into_iter().map(|(r, _)| r).collect();
    let mean = mean_curve(&curves);
    write_csv_tagged(&dir.join("curves_mean.csv"), &mean, &hash, &format!("{phase}-mean"))?;
    Ok(FinetuneSummary {
        arm: arm.to_string(),
        seeds: cfg.seeds.clone(),
        curves,
        mean,
    })
}

/// The four headline evaluation numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSummary {
    pub ee_mean: f64,
    pub ee_std: f64,
    pub viol_mean: f64,
    pub viol_std: f64,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            ee_mean: r.ee_mean,
            ee_std: r.ee_std,
            viol_mean: r.viol_mean,
            viol_std: r.viol_std,
        }
    }
}

#[derive(Debug, Clone)]
pub enum EvalTarget {
    Policy(PathBuf),
    /// Drift-plus-penalty over the fitted reward/cost models.
    Lyapunov,
    Uniform,
}

impl EvalTarget {
    pub fn name(&self) -> &'static str {
        match self {
            EvalTarget::Policy(_) => "policy",
            EvalTarget::Lyapunov => "lyapunov",
            EvalTarget::Uniform => "uniform",
        }
    }
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &OutLayout, target: &EvalTarget) -> Result<EvalSummary> {
    let mut env = Env::new(cfg.env.clone())?;
    let rng = SeededRng::new(cfg.seed, 0xe7a1);
    let n = cfg.eval_episodes;
    let report = match target {
        EvalTarget::Policy(p) => {
            let agent = load_checkpoint(cfg, p)?.to_agent(Some(cfg.ppo.clone()))?;
            let mut c = AgentController {
                agent: &agent,
                deterministic: cfg.ppo.deterministic_eval,
            };
            evaluate(&mut env, &mut c, n, &rng)?
        }
        EvalTarget::Lyapunov => {
            let model = VirtualCmdp::load(&out.bundle(), &cfg.env)?;
            let lcfg = crate::rl::LyapunovConfig {
                cost_threshold: cfg.ppo.cost_threshold,
                ..cfg.lyapunov
            };
            let mut c = LyapunovController::new(&model, cfg.env.action_dim(), lcfg);
            evaluate(&mut env, &mut c, n, &rng)?
        }
        EvalTarget::Uniform => {
            let mut c = UniformController {
                dim: cfg.env.action_dim(),
            };
            evaluate(&mut env, &mut c, n, &rng)?
        }
    };
    let summary = EvalSummary::from(&report);
    let path = out.root.join(format!("eval_{}.json", target.name()));
    write_json(&path, &summary)?;
    super::artifacts::write_meta(&path, &cfg.env_hash(), "eval")?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
struct SampleRow {
    condition: f64,
    sample: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ConditionRow {
    condition: f64,
    center_lo: f64,
    center_hi: f64,
    branch_lo: f64,
    branch_hi: f64,
    covered: bool,
}

pub fn cmd_halfmoons(cfg: &ExperimentConfig, out: &OutLayout) -> Result<HalfMoonsReport> {
    let dir = out.halfmoons()?;
    let run = run_halfmoons(&cfg.halfmoons, cfg.seed)?;
    let r = run.report;
    let samples: Vec<SampleRow> = r
        .samples
        .iter()
        .map(|&(condition, sample)| SampleRow { condition, sample })
        .collect();
    write_csv(&dir.join("samples.csv"), &samples)?;
    let conds: Vec<ConditionRow> = r
        .conditions
        .iter()
        .map(|c| ConditionRow {
            condition: c.condition,
            center_lo: c.centers.0,
            center_hi: c.centers.1,
            branch_lo: c.branches.0,
            branch_hi: c.branches.1,
            covered: c.covered,
        })
        .collect();
    write_csv(&dir.join("conditions.csv"), &conds)?;
    write_json(
        &dir.join("metrics.json"),
        &serde_json::json!({ "coverage": r.coverage, "n_conditions": r.n_conditions }),
    )?;
    Ok(r)
}

/// Verifies a curve CSV was produced under the current environment.
pub fn check_artifact(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    check_meta(path, &cfg.env_hash()).map(|_| ())
}

pub fn ensure_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} not found at {}; run the earlier phase first",
            path.display()
        )))
    }
}
