use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deterra::pipeline::{
    cmd_collect, cmd_eval, cmd_finetune, cmd_fit, cmd_halfmoons, cmd_pretrain, cmd_selftest, op_count_sweep,
    EvalTarget, ExperimentConfig, OutLayout,
};
use deterra::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ORACLE: u8 = 3;

/// Delay-constrained cell-free MIMO scheduling with virtual-environment pretraining.
#[derive(Parser, Debug)]
#[command(name = "deterra", version)]
struct Cli {
    /// JSON experiment configuration; omitted fields take desk-profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory shared by all phases.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record transitions under the uniform behavior policy.
    Collect,
    /// Fit the virtual CMDP to the collected dataset.
    Fit,
    /// Train a policy inside the virtual CMDP.
    Pretrain,
    /// Train on the real environment, optionally warm-started.
    Finetune {
        /// Policy checkpoint to start from; omit for the from-scratch arm.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Monte-Carlo evaluation on the real environment.
    Eval(EvalArgs),
    /// Conditional generation on the two half-moons benchmark.
    Halfmoons,
    /// Run the oracle suites; exits with 3 on any failure.
    Selftest,
    /// Print per-step operation counts as the system dimensions grow.
    Bench,
}

#[derive(Args, Debug)]
#[group(required = false, multiple = false)]
struct EvalArgs {
    /// Policy checkpoint to evaluate.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Evaluate the drift-plus-penalty baseline on the fitted models.
    #[arg(long)]
    lyapunov: bool,
    /// Evaluate the uniform behavior policy.
    #[arg(long)]
    uniform: bool,
}

fn threads_from_env() -> Result<(), Error> {
    let Ok(v) = std::env::var("DETERRA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("DETERRA_THREADS={v} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: &Cli) -> Result<u8, Error> {
    threads_from_env()?;
    let cfg = load_config(cli)?;
    if let Command::Selftest = cli.cmd {
        let suites = cmd_selftest(&cfg.env, cfg.seed)?;
        println!(
            "{:<44} {:>6} {:>12} {:>10} {:>8}",
            "suite", "result", "worst", "bound", "seconds"
        );
        for s in &suites {
            let verdict = if s.passed { "pass" } else { "FAIL" };
            println!(
                "{:<44} {:>6} {:>12.3e} {:>10.1e} {:>8.2}  {}",
                s.name, verdict, s.worst, s.bound, s.seconds, s.detail
            );
        }
        return Ok(if suites.iter().all(|s| s.passed) {
            0
        } else {
            EXIT_ORACLE
        });
    }
    if let Command::Bench = cli.cmd {
        println!(
            "{:>2} {:>2} {:>2} {:>2} {:>6} {:>6} {:>12} {:>12} {:>12} {:>14} {:>14} {:>14}",
            "B", "U", "K", "M", "state", "action", "env_step", "policy", "kan", "eacgmm_r", "eacgmm_q", "virtual_step"
        );
        for r in op_count_sweep(&cfg.ppo, &cfg.fit) {
            println!(
                "{:>2} {:>2} {:>2} {:>2} {:>6} {:>6} {:>12} {:>12} {:>12} {:>14} {:>14} {:>14}",
                r.b,
                r.u,
                r.k,
                r.m,
                r.state_dim,
                r.action_dim,
                r.env_step,
                r.policy_forward,
                r.kan_forward,
                r.eacgmm_channel,
                r.eacgmm_queue,
                r.virtual_step
            );
        }
        return Ok(0);
    }
    let out = OutLayout::new(&cli.out)?;
    match &cli.cmd {
        Command::Collect => print_json(&cmd_collect(&cfg, &out)?),
        Command::Fit => print_json(&cmd_fit(&cfg, &out)?),
        Command::Pretrain => {
            let s = cmd_pretrain(&cfg, &out)?;
            let last = s.curves.last();
            print_json(&serde_json::json!({
                "policy": s.policy,
                "episodes": s.curves.len(),
                "final_reward_mean": last.map(|r| r.reward_mean),
                "final_lambda": last.map(|r| r.lambda),
                "snapshots": s.snapshots,
            }));
        }
        Command::Finetune { policy } => {
            let s = cmd_finetune(&cfg, &out, policy.as_deref())?;
            let first = s.mean.first();
            let last = s.mean.last();
            print_json(&serde_json::json!({
                "arm": s.arm,
                "seeds": s.seeds,
                "first_episode": first,
                "last_episode": last,
            }));
        }
        Command::Eval(a) => {
            let target = match (&a.policy, a.lyapunov) {
                (Some(p), _) => EvalTarget::Policy(p.clone()),
                (None, true) => EvalTarget::Lyapunov,
                (None, false) => EvalTarget::Uniform,
            };
            print_json(&cmd_eval(&cfg, &out, &target)?);
        }
        Command::Halfmoons => {
            let r = cmd_halfmoons(&cfg, &out)?;
            print_json(&serde_json::json!({ "coverage": r.coverage, "n_conditions": r.n_conditions }));
        }
        Command::Selftest | Command::Bench => unreachable!("handled above"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e @ Error::Config(_)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
