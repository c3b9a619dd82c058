use deterra::env::{Cmdp, CmdpState, Env, EnvConfig};
use deterra::rl::{evaluate, Controller, UniformController};
use deterra::SeededRng;

/// Never schedules a link: zeta_hat below zero everywhere.
struct Silent {
    dim: usize,
}

impl Controller for Silent {
    fn act(&mut self, _s: &CmdpState, _rng: &mut SeededRng) -> Vec<f64> {
        let mut a = vec![0.0; self.dim];
        a[..self.dim / 3].fill(-0.9);
        a
    }
}

#[test]
fn silent_schedule_earns_nothing_and_violates_everything() {
    let mut env = Env::new(EnvConfig::default()).unwrap();
    let mut ctrl = Silent { dim: env.action_dim() };
    let r = evaluate(&mut env, &mut ctrl, 20, &SeededRng::new(3, 0)).unwrap();
    assert_eq!(r.ee_mean, 0.0);
    assert_eq!(r.ee_std, 0.0);
    assert!(r.viol_mean > 0.9, "viol {}", r.viol_mean);
}

#[test]
fn evaluation_is_reproducible() {
    let run = |seed| {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        let mut ctrl = UniformController { dim: env.action_dim() };
        evaluate(&mut env, &mut ctrl, 10, &SeededRng::new(seed, 0)).unwrap()
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a.ee_mean, run(6).ee_mean);
    assert!(a.ee_mean > 0.0 && a.ee_mean.is_finite());
    assert!(a.viol_mean > 0.0 && a.viol_mean < 1.0);
}

#[test]
fn episodes_do_not_depend_on_evaluation_length() {
    // episode i draws from its own derived stream
    let mut env = Env::new(EnvConfig::default()).unwrap();
    let mut ctrl = UniformController { dim: env.action_dim() };
    let rng = SeededRng::new(9, 0);
    let one = evaluate(&mut env, &mut ctrl, 1, &rng).unwrap();
    let first = deterra::rl::run_episode(&mut env, &mut ctrl, &mut rng.derive(0)).unwrap();
    assert_eq!(one.ee_mean, first.ee);
}
