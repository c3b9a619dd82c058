//! Acceptance criteria at desk scale. Every test writes one PASS/FAIL line
//! straight to stderr, so the line shows up even when libtest captures the
//! test's output, then asserts on the same verdict.
//!
//! Set `DETERRA_ACCEPTANCE_OUT=<dir>` to keep the desk pipeline artifacts.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use deterra::env::EnvConfig;
use deterra::genmodel::{run_halfmoons, FidelityReport, HalfMoonsConfig};
use deterra::pipeline::selftest::{
    suite_blocklength, suite_chi2, suite_gae, suite_gradients, suite_packets, suite_schur,
};
use deterra::pipeline::{
    cmd_collect, cmd_eval, cmd_finetune, cmd_fit, cmd_pretrain, compare_arms, curve_trend, EvalSummary, EvalTarget,
    ExperimentConfig, FinetuneSummary, OutLayout, SuiteResult,
};
use deterra::rl::{evaluate_policy, train_loop, Agent, ObsNormalizer, PpoConfig, TwoStateCmdp};
use deterra::SeededRng;

fn report(n: u32, name: &str, passed: bool, detail: &str, seconds: f64) -> bool {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let line = format!("acceptance {n:>2} {verdict} {name}: {detail} [{seconds:.1} s]\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    passed
}

fn suite(n: u32, name: &str, limit_s: f64, run: impl FnOnce() -> deterra::Result<SuiteResult>) {
    let t = Instant::now();
    let r = run().expect("suite runs");
    let secs = t.elapsed().as_secs_f64();
    let ok = r.passed && secs < limit_s;
    let detail = format!("worst {:.3e} vs bound {:.1e}; {}", r.worst, r.bound, r.detail);
    assert!(
        report(n, name, ok, &detail, secs),
        "{name}: {detail}, {secs:.1} s (limit {limit_s} s)"
    );
}

#[test]
fn c01_schur_complement_oracle() {
    suite(1, "conditional/marginal vs dense Schur oracle", 10.0, || {
        suite_schur(1000, 0)
    });
}

#[test]
fn c02_chi2_quantiles() {
    suite(2, "chi2 quantiles vs quadrature inversion", 5.0, suite_chi2);
}

#[test]
fn c03_finite_blocklength() {
    suite(3, "finite-blocklength spot value", 1.0, suite_blocklength);
}

#[test]
fn c04_gradient_fidelity() {
    suite(4, "MLP/KAN/VAE-ChMDN gradients vs finite differences", 120.0, || {
        suite_gradients(120, 0)
    });
}

#[test]
fn c05_packets_and_power() {
    suite(5, "packet conservation and power feasibility", 60.0, || {
        suite_packets(&EnvConfig::default(), 100, 0)
    });
}

#[test]
fn c05b_gae_oracle() {
    // not a numbered criterion, but the PPO checks below lean on it
    let r = suite_gae(200, 0).unwrap();
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn c06_synthetic_cmdp_optimum() {
    let t = Instant::now();
    let d = 0.005;
    let (best, _) = TwoStateCmdp::new(20).best_constrained(d);
    let cfg = PpoConfig {
        hidden: vec![16],
        rollout_episodes: 8,
        minibatch: 80,
        policy_lr: 3e-3,
        value_lr: 3e-3,
        cost_threshold: d,
        ..PpoConfig::default()
    };
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_cost = 0.0f64;
    for seed in 0..5 {
        let mut env = TwoStateCmdp::new(20);
        let mut rng = SeededRng::new(seed, 0);
        let mut agent = Agent::new(2, 1, ObsNormalizer::identity(2), cfg.clone(), &mut rng).unwrap();
        train_loop(&mut env, &mut agent, 800, seed, &mut rng, |_, _| Ok(())).unwrap();
        let r = evaluate_policy(&mut env, &agent, 50, false, &SeededRng::new(seed, 9)).unwrap();
        let cost = r.episodes.iter().map(|e| e.cost_mean).sum::<f64>() / r.episodes.len() as f64;
        worst_gap = worst_gap.max(best - r.ee_mean);
        worst_cost = worst_cost.max(cost);
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst_gap <= 0.05 && worst_cost <= d + 0.02 && secs < 300.0;
    let detail = format!(
        "optimum {best:.3}, worst gap {worst_gap:.4} (<= 0.05), worst cost {worst_cost:.4} (<= {:.3}), 5 seeds",
        d + 0.02
    );
    assert!(
        report(6, "PPO-Lagrangian on the enumerable CMDP", ok, &detail, secs),
        "{detail}"
    );
}

#[test]
fn c07_halfmoons_branch_coverage() {
    let t = Instant::now();
    let run = run_halfmoons(&HalfMoonsConfig::default(), 0).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let r = &run.report;
    let ok = r.coverage >= 0.9 && secs < 300.0;
    let detail = format!("coverage {:.3} over {} conditions (>= 0.9)", r.coverage, r.n_conditions);
    assert!(report(7, "half-moons branch coverage", ok, &detail, secs), "{detail}");
}

/// Everything the desk-scale criteria share: one collect, fit, pretrain,
/// both fine-tuning arms and the Lyapunov evaluation.
struct Desk {
    _tmp: Option<tempfile::TempDir>,
    fit: FidelityReport,
    fit_seconds: f64,
    warm: FinetuneSummary,
    cold: FinetuneSummary,
    pipeline_seconds: f64,
    lyapunov: EvalSummary,
    lyapunov_seconds: f64,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let (tmp, root) = match std::env::var_os("DETERRA_ACCEPTANCE_OUT") {
            Some(p) => (None, PathBuf::from(p)),
            None => {
                let t = tempfile::tempdir().unwrap();
                let p = t.path().to_path_buf();
                (Some(t), p)
            }
        };
        let out = OutLayout::new(&root).unwrap();
        let cfg = ExperimentConfig::desk();
        let t = Instant::now();
        cmd_collect(&cfg, &out).unwrap();
        let fit = cmd_fit(&cfg, &out).unwrap();
        let fit_seconds = t.elapsed().as_secs_f64();
        let pre = cmd_pretrain(&cfg, &out).unwrap();
        let warm = cmd_finetune(&cfg, &out, Some(&pre.policy)).unwrap();
        let cold = cmd_finetune(&cfg, &out, None).unwrap();
        let pipeline_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let lyapunov = cmd_eval(&cfg, &out, &EvalTarget::Lyapunov).unwrap();
        let lyapunov_seconds = t.elapsed().as_secs_f64();
        Desk {
            _tmp: tmp,
            fit,
            fit_seconds,
            warm,
            cold,
            pipeline_seconds,
            lyapunov,
            lyapunov_seconds,
        }
    })
}

/// Episodes averaged at each end of a fine-tuning curve.
const TREND_WINDOW: usize = 10;

#[test]
fn c08_virtual_cmdp_fidelity() {
    let d = desk();
    let f = &d.fit;
    let tr = &f.transition;
    let ok = f.init_mmd <= 3.0 * f.init_mmd_calibration
        && tr.r_mae_avg <= 0.15
        && tr.q_mae_avg <= 0.15
        && d.fit_seconds < 900.0;
    let detail = format!(
        "init MMD2 {:.4} vs 3x calibration {:.4}; one-step MAE r {:.4}, q {:.4} (<= 0.15)",
        f.init_mmd,
        3.0 * f.init_mmd_calibration,
        tr.r_mae_avg,
        tr.q_mae_avg
    );
    assert!(
        report(8, "virtual CMDP fidelity", ok, &detail, d.fit_seconds),
        "{detail}"
    );
}

#[test]
fn c09_pretraining_benefit() {
    let d = desk();
    let c = compare_arms(&d.warm.mean, &d.cold.mean, TREND_WINDOW).unwrap();
    let ok = d.warm.seeds.len() >= 5
        && c.start_ee_ratio >= 1.3
        && c.start_viol_ratio <= 0.5
        && c.episode_reduction >= 0.2
        && d.pipeline_seconds < 3600.0;
    let detail = format!(
        "start EE ratio {:.3} (>= 1.3), start violation ratio {:.3} (<= 0.5), episodes to 95% {} vs {} = {:.1}% fewer (>= 20%), {} seeds",
        c.start_ee_ratio,
        c.start_viol_ratio,
        c.pretrained.episodes_to_95,
        c.scratch.episodes_to_95,
        100.0 * c.episode_reduction,
        d.warm.seeds.len()
    );
    assert!(
        report(9, "pretraining benefit", ok, &detail, d.pipeline_seconds),
        "{detail}"
    );
}

#[test]
fn c10_lyapunov_between_untrained_and_converged() {
    let d = desk();
    let first = d.cold.mean[0].reward_mean;
    let converged = curve_trend(&d.cold.mean, TREND_WINDOW).unwrap().final_ee;
    let ee = d.lyapunov.ee_mean;
    let (lo, hi) = (first.min(converged), first.max(converged));
    let ok = ee > lo && ee < hi && d.lyapunov_seconds < 600.0;
    let detail = format!("Lyapunov EE {ee:.4e} within scratch PPO episode 1 {first:.4e} .. converged {converged:.4e}");
    assert!(
        report(10, "Lyapunov baseline sanity", ok, &detail, d.lyapunov_seconds),
        "{detail}"
    );
}

#[test]
fn c11_kan_vs_mlp_reward_regression() {
    let d = desk();
    let row = |m: &str| {
        d.fit
            .regressors
            .iter()
            .find(|r| r.model == m && r.target == "reward")
            .unwrap_or_else(|| panic!("no {m} reward regressor"))
    };
    let (kan, mlp) = (row("kan"), row("mlp"));
    let ok = kan.report.test_mae <= 0.1
        && mlp.report.test_mae <= 0.1
        && kan.report.test_bias.abs() <= mlp.report.test_bias.abs()
        && d.fit_seconds < 600.0;
    let detail = format!(
        "test MAE KAN {:.4}, MLP {:.4} (<= 0.1); |bias| KAN {:.4} vs MLP {:.4}; params {} vs {}",
        kan.report.test_mae,
        mlp.report.test_mae,
        kan.report.test_bias.abs(),
        mlp.report.test_bias.abs(),
        kan.params,
        mlp.params
    );
    assert!(
        report(11, "KAN vs MLP at parameter parity", ok, &detail, d.fit_seconds),
        "{detail}"
    );
}
