//! Delay-constrained resource allocation for cell-free MIMO-OFDM downlinks.
//!
//! The crate is organized bottom-up:
//!
//! - [`mathcore`]: Cholesky-precision Gaussians, quantiles, MMD.
//! - [`env`]: the real constrained MDP (channels, finite-blocklength rates, queues).
//! - [`nn`]: MLP and Kolmogorov-Arnold regressors with analytic gradients.
//! - [`genmodel`]: GMMs, the VAE mixture-density trainer, evidence-aware
//!   conditional inference, and the learned virtual environment.
//! - [`rl`]: PPO with a Lagrangian cost constraint and baselines.
//! - [`pipeline`]: the collect / fit / pretrain / finetune / eval phases.

// `!(x > 0.0)` is how NaN gets rejected here, and index loops read closer
// to the linear algebra they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod env;
pub mod error;
pub mod genmodel;
pub mod mathcore;
pub mod nn;
pub mod pipeline;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};
pub use rng::SeededRng;
