use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension affine map of the observed range onto `[-1, 1]`.
/// Constant dimensions map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &[Vec<f64>]) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| Error::InsufficientData("cannot fit scaler on empty data".into()))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for row in data {
            crate::error::check_dim(lo.len(), row.len(), "scaler row")?;
            for (k, &v) in row.iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let span = self.hi[k] - self.lo[k];
                if span > 0.0 {
                    2.0 * (v - self.lo[k]) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, &v)| {
                let span = self.hi[k] - self.lo[k];
                self.lo[k] + (v + 1.0) * 0.5 * span
            })
            .collect()
    }

    /// Half-range per dimension: the factor that maps a normalized error back.
    pub fn half_range(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }
}

/// Zero-mean unit-variance standardization for regression targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &[Vec<f64>]) -> Result<Self> {
        let n = data.len();
        if n == 0 {
            return Err(Error::InsufficientData("cannot standardize empty data".into()));
        }
        let d = data[0].len();
        let mut mean = vec![0.0; d];
        for row in data {
            crate::error::check_dim(d, row.len(), "standardizer row")?;
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for row in data {
            for k in 0..d {
                var[k] += (row[k] - mean[k]).powi(2) / n as f64;
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(v, m)| {
                let s = v.sqrt();
                // constant targets: keep the unit scale rather than dividing by ~0
                if s > 1e-12 * m.abs().max(1.0) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k]) / self.std[k])
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, v)| v * self.std[k] + self.mean[k])
            .collect()
    }
}
