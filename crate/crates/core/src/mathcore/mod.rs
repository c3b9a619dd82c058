//! Deterministic numerical kernels shared by every other module.

pub mod gaussian;
pub mod linalg;
pub mod mmd;
pub mod special;

pub use gaussian::{
    conditional_block, log_density, mahalanobis_sq, marginal_block, sample, BlockSplit, CholeskyGaussian, DIAG_FLOOR,
};
pub use mmd::{median_bandwidth, mmd_sq, mmd_sq_median};
pub use special::{chi2_quantile, chi2_sf, gaussian_q, gaussian_q_inv};
