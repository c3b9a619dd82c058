//! Multivariate normals parameterized by the upper Cholesky factor of the
//! precision matrix: `precision = U^T U`, `covariance = (U^T U)^{-1}`.

use serde::{Deserialize, Serialize};

use super::linalg;
use crate::error::{check_dim, Error, Result};
use crate::rng::SeededRng;

/// Lower bound applied to every diagonal entry of the precision factor.
pub const DIAG_FLOOR: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyGaussian {
    mean: Vec<f64>,
    /// Row-major `n x n`, zero strictly below the diagonal.
    chol: Vec<f64>,
}

/// Partition point: the leading block has `m` coordinates, the trailing `n - m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSplit {
    pub m: usize,
}

impl BlockSplit {
    pub fn new(m: usize) -> Self {
        Self { m }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.m == 0 || self.m >= n {
            return Err(Error::InvalidArgument(format!(
                "block split m={} out of range for dimension {n}",
                self.m
            )));
        }
        Ok(())
    }
}

impl CholeskyGaussian {
    /// Validates shape and triangularity; diagonal entries below the floor are raised to it.
    pub fn new(mean: Vec<f64>, mut chol: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty Gaussian".into()));
        }
        check_dim(n * n, chol.len(), "cholesky factor entries")?;
        if mean.iter().chain(chol.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Gaussian parameter".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if chol[i * n + j] != 0.0 {
                    return Err(Error::InvalidArgument(
                        "cholesky factor must be upper-triangular".into(),
                    ));
                }
            }
            let d = &mut chol[i * n + i];
            if *d < DIAG_FLOOR {
                *d = DIAG_FLOOR;
            }
        }
        Ok(Self { mean, chol })
    }

    /// Builds the precision factor from a dense covariance matrix.
    pub fn from_covariance(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let n = mean.len();
        check_dim(n * n, cov.len(), "covariance entries")?;
        let u = linalg::precision_factor_from_covariance(cov, n)
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        Self::new(mean, u)
    }

    /// Independent coordinates with the given standard deviations.
    pub fn diagonal(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        let n = mean.len();
        check_dim(n, std.len(), "standard deviations")?;
        let mut u = vec![0.0; n * n];
        for i in 0..n {
            u[i * n + i] = 1.0 / std[i];
        }
        Self::new(mean, u)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn chol_factor(&self) -> &[f64] {
        &self.chol
    }

    pub fn log_det_factor(&self) -> f64 {
        let n = self.dim();
        (0..n).map(|i| self.chol[i * n + i].ln()).sum()
    }

    /// Dense covariance; for reporting and tests only.
    pub fn covariance(&self) -> Vec<f64> {
        linalg::covariance_from_upper(&self.chol, self.dim())
    }

    pub fn precision(&self) -> Vec<f64> {
        linalg::gram_upper(&self.chol, self.dim())
    }

    /// `U (x - mean)`.
    pub fn whiten(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len(), "whiten input")?;
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(linalg::upper_mul_vec(&self.chol, self.dim(), &diff))
    }

    /// Fully normalized log density.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let z = self.whiten(x)?;
        let quad: f64 = z.iter().map(|v| v * v).sum();
        Ok(-0.5 * self.dim() as f64 * LN_2PI - 0.5 * quad + self.log_det_factor())
    }

    /// `||U (w - mean)||^2`.
    pub fn mahalanobis_sq(&self, w: &[f64]) -> Result<f64> {
        let z = self.whiten(w)?;
        Ok(z.iter().map(|v| v * v).sum())
    }

    /// `mean + U^{-1} eps` for a caller-supplied standard-normal vector.
    pub fn transform_noise(&self, eps: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), eps.len(), "noise vector")?;
        let shift = linalg::solve_upper(&self.chol, self.dim(), eps);
        Ok(self.mean.iter().zip(shift).map(|(m, s)| m + s).collect())
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        let eps = rng.normal_vec(self.dim());
        self.transform_noise(&eps).expect("noise has matching dimension")
    }

    fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for i in rows {
            out.extend_from_slice(&self.chol[i * n + cols.start..i * n + cols.end]);
        }
        out
    }

    /// Distribution of the trailing block: `N(mean2, (U22^T U22)^{-1})`.
    pub fn marginal_block(&self, split: BlockSplit) -> Result<CholeskyGaussian> {
        let n = self.dim();
        split.check(n)?;
        let m = split.m;
        Ok(CholeskyGaussian {
            mean: self.mean[m..].to_vec(),
            chol: self.block(m..n, m..n),
        })
    }

    /// Distribution of the leading block given the trailing block equals `x2`:
    /// mean `mean1 - U11^{-1} U12 (x2 - mean2)`, factor `U11`.
    pub fn conditional_block(&self, split: BlockSplit, x2: &[f64]) -> Result<CholeskyGaussian> {
        let n = self.dim();
        split.check(n)?;
        let m = split.m;
        check_dim(n - m, x2.len(), "conditioning vector")?;
        let u11 = self.block(0..m, 0..m);
        let diff: Vec<f64> = x2.iter().zip(&self.mean[m..]).map(|(a, b)| a - b).collect();
        let rhs: Vec<f64> = (0..m)
            .map(|i| {
                let row = &self.chol[i * n + m..(i + 1) * n];
                row.iter().zip(&diff).map(|(a, b)| a * b).sum()
            })
            .collect();
        let shift = linalg::solve_upper(&u11, m, &rhs);
        let mean = self.mean[..m].iter().zip(shift).map(|(mu, s)| mu - s).collect();
        Ok(CholeskyGaussian { mean, chol: u11 })
    }
}

/// Free-function form of [`CholeskyGaussian::log_density`].
pub fn log_density(g: &CholeskyGaussian, x: &[f64]) -> Result<f64> {
    g.log_density(x)
}

pub fn sample(g: &CholeskyGaussian, rng: &mut SeededRng) -> Vec<f64> {
    g.sample(rng)
}

pub fn marginal_block(g: &CholeskyGaussian, split: BlockSplit) -> Result<CholeskyGaussian> {
    g.marginal_block(split)
}

pub fn conditional_block(g: &CholeskyGaussian, split: BlockSplit, x2_star: &[f64]) -> Result<CholeskyGaussian> {
    g.conditional_block(split, x2_star)
}

pub fn mahalanobis_sq(marginal: &CholeskyGaussian, w_star: &[f64]) -> Result<f64> {
    marginal.mahalanobis_sq(w_star)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_2d() -> CholeskyGaussian {
        CholeskyGaussian::new(vec![0.0, 0.0], vec![1.0, -1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = CholeskyGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert!((g.log_density(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn two_dim_at_mode() {
        let g = example_2d();
        assert!((g.log_density(&[0.0, 0.0]).unwrap() + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        let cov = g.covariance();
        let expected = [2.0, 1.0, 1.0, 1.0];
        for (a, b) in cov.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn density_at_mean_is_normalizer() {
        let g = CholeskyGaussian::new(vec![1.0, -2.0], vec![2.0, 0.3, 0.0, 0.5]).unwrap();
        let expected = -LN_2PI + 2.0f64.ln() + 0.5f64.ln();
        assert!((g.log_density(&[1.0, -2.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sampling_transform() {
        let g = CholeskyGaussian::new(vec![0.0], vec![2.0]).unwrap();
        assert_eq!(g.transform_noise(&[1.0]).unwrap(), vec![0.5]);
        let g = CholeskyGaussian::new(vec![3.0, 4.0], vec![1.0, 0.2, 0.0, 3.0]).unwrap();
        assert_eq!(g.transform_noise(&[0.0, 0.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn marginal_and_conditional_of_example() {
        let g = example_2d();
        let marg = g.marginal_block(BlockSplit::new(1)).unwrap();
        assert_eq!(marg.mean(), &[0.0]);
        assert!((marg.covariance()[0] - 1.0).abs() < 1e-12);
        let cond = g.conditional_block(BlockSplit::new(1), &[1.0]).unwrap();
        assert!((cond.mean()[0] - 1.0).abs() < 1e-12);
        assert!((cond.covariance()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_blocks_condition_to_marginal() {
        let g = CholeskyGaussian::new(vec![1.0, 2.0, 3.0], vec![2.0, 0.0, 0.0, 0.0, 1.0, 0.4, 0.0, 0.0, 0.5]).unwrap();
        let cond = g.conditional_block(BlockSplit::new(1), &[10.0, -4.0]).unwrap();
        assert_eq!(cond.mean(), &[1.0]);
        assert_eq!(cond.chol_factor(), &[2.0]);
    }

    #[test]
    fn mahalanobis_simple() {
        let g = CholeskyGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(g.mahalanobis_sq(&[2.0]).unwrap(), 4.0);
        assert_eq!(g.mahalanobis_sq(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(CholeskyGaussian::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.5, 1.0]).is_err());
        let g = example_2d();
        assert!(g.log_density(&[0.0]).is_err());
        assert!(g.marginal_block(BlockSplit::new(0)).is_err());
        assert!(g.marginal_block(BlockSplit::new(2)).is_err());
        assert!(g.conditional_block(BlockSplit::new(1), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn diagonal_floor_applied() {
        let g = CholeskyGaussian::new(vec![0.0], vec![1e-9]).unwrap();
        assert_eq!(g.chol_factor()[0], DIAG_FLOOR);
    }
}
