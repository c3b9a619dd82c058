//! Kernel two-sample statistics.

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Biased empirical MMD^2 with the Gaussian kernel `exp(-|a-b|^2 / (2 h^2))`.
pub fn mmd_sq(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("MMD needs non-empty sample sets".into()));
    }
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "MMD expects equal sample counts, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    let dim = x[0].len();
    if x.iter().chain(y.iter()).any(|v| v.len() != dim) {
        return Err(Error::InvalidArgument("ragged sample matrix".into()));
    }
    let scale = -0.5 / (bandwidth * bandwidth);
    let kernel_mean = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for p in a {
            for q in b {
                total += (scale * sq_dist(p, q)).exp();
            }
        }
        total / (a.len() * b.len()) as f64
    };
    Ok(kernel_mean(x, x) + kernel_mean(y, y) - 2.0 * kernel_mean(x, y))
}

/// Median pairwise Euclidean distance over the pooled samples.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y.iter()).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if *median > 0.0 {
        *median
    } else {
        1.0
    }
}

/// MMD^2 with the median-heuristic bandwidth.
pub fn mmd_sq_median(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let h = median_bandwidth(x, y);
    mmd_sq(x, y, h)
}
