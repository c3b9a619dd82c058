//! Policy optimization against the shared reset/step contract: PPO with a
//! Lagrangian cost constraint, the uniform behavior policy, and the
//! drift-plus-penalty baseline.

pub mod checkpoint;
pub mod control;
pub mod policy;
pub mod ppo;
pub mod synthetic;
pub mod train;

pub use checkpoint::{PolicyCheckpoint, CHECKPOINT_VERSION};
pub use control::{
    behavior_policy_uniform, lyapunov_baseline, lyapunov_queue_update, lyapunov_select, AgentController, Controller,
    LyapunovConfig, LyapunovController, RewardCostModel, UniformController,
};
pub use policy::{ActSample, ObsNormalizer, Policy, PolicySpec};
pub use ppo::{dual_update, gae, Agent, DualState, PpoConfig, RolloutBuffer, Transition, UpdateStats};
pub use synthetic::TwoStateCmdp;
pub use train::{evaluate, evaluate_policy, run_episode, train_loop, CurveRow, EpisodeStats, EvalReport};
