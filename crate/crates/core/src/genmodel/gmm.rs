//! Gaussian mixtures over Cholesky-precision components.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mathcore::CholeskyGaussian;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    weights: Vec<f64>,
    components: Vec<CholeskyGaussian>,
}

/// Stable `ln sum exp`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax of `v`, computed relative to the maximum.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl Gmm {
    /// Weights must be non-negative with a positive sum; they are renormalized
    /// so the simplex invariant holds to rounding.
    pub fn new(weights: Vec<f64>, components: Vec<CholeskyGaussian>) -> Result<Self> {
        check_dim(components.len(), weights.len(), "mixture weights")?;
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture needs at least one component".into()))?;
        let n = first.dim();
        if components.iter().any(|c| c.dim() != n) {
            return Err(Error::InvalidArgument("mixture components differ in dimension".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("mixture weights sum to zero".into()));
        }
        let weights = if (total - 1.0).abs() > 1e-12 {
            weights.into_iter().map(|w| w / total).collect()
        } else {
            weights
        };
        Ok(Self { weights, components })
    }

    pub fn single(c: CholeskyGaussian) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![c],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[CholeskyGaussian] {
        &self.components
    }

    /// `ln pi_g + ln p_g(x)` per component.
    pub fn weighted_log_densities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| Ok(w.ln() + c.log_density(x)?))
            .collect()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        Ok(log_sum_exp(&self.weighted_log_densities(x)?))
    }

    /// Posterior component probabilities.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.weighted_log_densities(x)?))
    }

    /// Inverse-CDF categorical draw.
    pub fn sample_component(&self, rng: &mut SeededRng) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // rounding left u beyond the last partial sum: take the last component with mass
        self.weights
            .iter()
            .rposition(|&w| w > 0.0)
            .expect("positive total weight")
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        let g = self.sample_component(rng);
        self.components[g].sample(rng)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (a, b) in m.iter_mut().zip(c.mean()) {
                *a += w * b;
            }
        }
        m
    }

    /// Little-endian f64 block: `G, n`, then per component the weight, the
    /// mean and the packed upper triangle of `U` (row by row).
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.dim();
        let mut out = Vec::new();
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for (w, c) in self.weights.iter().zip(&self.components) {
            out.extend_from_slice(&w.to_le_bytes());
            for v in c.mean() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let u = c.chol_factor();
            for i in 0..n {
                for j in i..n {
                    out.extend_from_slice(&u[i * n + j].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut vals = bytes.chunks_exact(8);
        if !bytes.len().is_multiple_of(8) || bytes.len() < 16 {
            return Err(Error::Format("truncated mixture block".into()));
        }
        let mut next_u64 =
            || -> u64 { u64::from_le_bytes(vals.next().expect("length checked").try_into().expect("8 bytes")) };
        let g = next_u64() as usize;
        let n = next_u64() as usize;
        let per = 1 + n + n * (n + 1) / 2;
        if bytes.len() != 16 + 8 * g * per {
            return Err(Error::Format(format!(
                "mixture block holds {} bytes, expected {}",
                bytes.len(),
                16 + 8 * g * per
            )));
        }
        let floats: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut weights = Vec::with_capacity(g);
        let mut comps = Vec::with_capacity(g);
        for blk in floats.chunks_exact(per) {
            weights.push(blk[0]);
            let mean = blk[1..1 + n].to_vec();
            let mut u = vec![0.0; n * n];
            let mut k = 1 + n;
            for i in 0..n {
                for j in i..n {
                    u[i * n + j] = blk[k];
                    k += 1;
                }
            }
            comps.push(CholeskyGaussian::new(mean, u)?);
        }
        Self::new(weights, comps)
    }
}

/// Free-function form of [`Gmm::log_likelihood`].
pub fn gmm_log_likelihood(gmm: &Gmm, x: &[f64]) -> Result<f64> {
    gmm.log_likelihood(x)
}

pub fn gmm_sample(gmm: &Gmm, rng: &mut SeededRng) -> Vec<f64> {
    gmm.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_gaussian(n: usize, rng: &mut SeededRng) -> CholeskyGaussian {
        let mean = rng.normal_vec(n);
        let mut u = vec![0.0; n * n];
        for i in 0..n {
            u[i * n + i] = 0.5 + rng.uniform();
            for j in i + 1..n {
                u[i * n + j] = 0.3 * rng.normal();
            }
        }
        CholeskyGaussian::new(mean, u).unwrap()
    }

    #[test]
    fn single_component_is_log_density() {
        let mut rng = SeededRng::new(1, 0);
        let c = random_gaussian(3, &mut rng);
        let x = rng.normal_vec(3);
        let g = Gmm::single(c.clone());
        assert_eq!(g.log_likelihood(&x).unwrap(), c.log_density(&x).unwrap());
    }

    #[test]
    fn identical_components_collapse() {
        let mut rng = SeededRng::new(2, 0);
        let c = random_gaussian(2, &mut rng);
        let g = Gmm::new(vec![0.5, 0.5], vec![c.clone(), c.clone()]).unwrap();
        let x = [0.2, -0.4];
        assert!((g.log_likelihood(&x).unwrap() - c.log_density(&x).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn matches_naive_summation() {
        let mut rng = SeededRng::new(3, 0);
        for _ in 0..50 {
            let a = random_gaussian(2, &mut rng);
            let b = random_gaussian(2, &mut rng);
            let w = rng.uniform();
            let g = Gmm::new(vec![w, 1.0 - w], vec![a.clone(), b.clone()]).unwrap();
            let x = rng.normal_vec(2);
            let naive = (w * a.log_density(&x).unwrap().exp() + (1.0 - w) * b.log_density(&x).unwrap().exp()).ln();
            assert!((g.log_likelihood(&x).unwrap() - naive).abs() <= 1e-10 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = SeededRng::new(4, 0);
        let comps: Vec<_> = (0..5).map(|_| random_gaussian(2, &mut rng)).collect();
        let g = Gmm::new(vec![0.1, 0.7, 0.3, 0.2, 0.9], comps).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(Gmm::new(
            vec![0.0, 0.0],
            vec![random_gaussian(2, &mut rng), random_gaussian(2, &mut rng)]
        )
        .is_err());
        assert!(Gmm::new(
            vec![1.0, -0.1],
            vec![random_gaussian(2, &mut rng), random_gaussian(2, &mut rng)]
        )
        .is_err());
    }

    #[test]
    fn degenerate_weights_pick_first() {
        let mut rng = SeededRng::new(5, 0);
        let g = Gmm::new(
            vec![1.0, 0.0],
            vec![random_gaussian(2, &mut rng), random_gaussian(2, &mut rng)],
        )
        .unwrap();
        for _ in 0..1000 {
            assert_eq!(g.sample_component(&mut rng), 0);
        }
    }

    #[test]
    fn component_frequency_and_mean() {
        let mut rng = SeededRng::new(6, 0);
        let a = CholeskyGaussian::diagonal(vec![-2.0, 0.0], &[0.5, 0.5]).unwrap();
        let b = CholeskyGaussian::diagonal(vec![3.0, 1.0], &[0.5, 0.5]).unwrap();
        let g = Gmm::new(vec![0.3, 0.7], vec![a, b]).unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|_| g.sample_component(&mut rng) == 0).count();
        // 0.005 is about 3.5 binomial standard errors
        assert!((hits as f64 / n as f64 - 0.3).abs() < 0.005);
        let mut m = [0.0; 2];
        for _ in 0..n {
            let x = g.sample(&mut rng);
            m[0] += x[0] / n as f64;
            m[1] += x[1] / n as f64;
        }
        let expect = g.mean();
        // mixture std along axis 0 is about 2.5, so SE is about 0.008
        assert!((m[0] - expect[0]).abs() < 0.03 && (m[1] - expect[1]).abs() < 0.01);
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = SeededRng::new(7, 0);
        let comps: Vec<_> = (0..3).map(|_| random_gaussian(4, &mut rng)).collect();
        let g = Gmm::new(vec![0.2, 0.3, 0.5], comps).unwrap();
        let back = Gmm::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
        assert!(Gmm::from_bytes(&g.to_bytes()[..40]).is_err());
    }
}
