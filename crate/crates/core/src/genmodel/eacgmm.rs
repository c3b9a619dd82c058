//! Evidence-aware conditional inference on a joint mixture.
//!
//! Each component is conditioned analytically. Components whose trailing
//! marginal finds the evidence credible (squared Mahalanobis distance below
//! the chi-squared quantile) share the weight uniformly. When none is
//! credible the weights fall back to a softmax over marginal log densities.

use serde::{Deserialize, Serialize};

use super::gmm::{softmax, Gmm};
use crate::error::{check_dim, Result};
use crate::mathcore::{chi2_quantile, BlockSplit, CholeskyGaussian};
use crate::rng::SeededRng;

pub const DEFAULT_ALPHA: f64 = 0.03;

/// Per-call diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub gmm: Gmm,
    pub mask: Vec<bool>,
    pub distances: Vec<f64>,
}

impl Inference {
    pub fn credible(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Joint mixture prepared for repeated conditioning: trailing marginals and
/// the chi-squared threshold are computed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalModel {
    pub joint: Gmm,
    pub split: BlockSplit,
    pub alpha: f64,
    threshold: f64,
    marginals: Vec<CholeskyGaussian>,
}

impl ConditionalModel {
    pub fn new(joint: Gmm, split: BlockSplit, alpha: f64) -> Result<Self> {
        let d = joint.dim().saturating_sub(split.m);
        let threshold = chi2_quantile(d as u32, alpha)?;
        let marginals = joint
            .components()
            .iter()
            .map(|c| c.marginal_block(split))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            joint,
            split,
            alpha,
            threshold,
            marginals,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn output_dim(&self) -> usize {
        self.split.m
    }

    pub fn condition_dim(&self) -> usize {
        self.joint.dim() - self.split.m
    }

    pub fn infer(&self, w_star: &[f64]) -> Result<Inference> {
        check_dim(self.condition_dim(), w_star.len(), "conditioning evidence")?;
        let mut comps = Vec::with_capacity(self.joint.len());
        let mut distances = Vec::with_capacity(self.joint.len());
        let mut log_marg = Vec::with_capacity(self.joint.len());
        for (c, marg) in self.joint.components().iter().zip(&self.marginals) {
            comps.push(c.conditional_block(self.split, w_star)?);
            let eps = marg.mahalanobis_sq(w_star)?;
            distances.push(eps);
            log_marg.push(-0.5 * eps + marg.log_det_factor());
        }
        let mask: Vec<bool> = distances.iter().map(|&e| e < self.threshold).collect();
        let k = mask.iter().filter(|&&m| m).count();
        let weights = if k > 0 {
            mask.iter().map(|&m| if m { 1.0 / k as f64 } else { 0.0 }).collect()
        } else {
            softmax(&log_marg)
        };
        Ok(Inference {
            gmm: Gmm::new(weights, comps)?,
            mask,
            distances,
        })
    }

    /// One draw of the leading block given the evidence.
    pub fn sample(&self, w_star: &[f64], rng: &mut SeededRng) -> Result<Vec<f64>> {
        Ok(self.infer(w_star)?.gmm.sample(rng))
    }
}

pub fn ea_cgmm_infer(joint: &Gmm, split: BlockSplit, w_star: &[f64], alpha: f64) -> Result<Gmm> {
    Ok(ConditionalModel::new(joint.clone(), split, alpha)?.infer(w_star)?.gmm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joint_2d(mean: [f64; 2], sd: f64, rho: f64) -> CholeskyGaussian {
        let c = rho * sd * sd;
        CholeskyGaussian::from_covariance(mean.to_vec(), &[sd * sd, c, c, sd * sd]).unwrap()
    }

    #[test]
    fn single_component_equals_conditional_block() {
        let c = joint_2d([1.0, 2.0], 1.5, 0.6);
        let g = Gmm::single(c.clone());
        for w in [-40.0, 0.3, 2.0] {
            let out = ea_cgmm_infer(&g, BlockSplit::new(1), &[w], DEFAULT_ALPHA).unwrap();
            assert_eq!(out.weights(), &[1.0]);
            assert_eq!(
                out.components()[0],
                c.conditional_block(BlockSplit::new(1), &[w]).unwrap()
            );
        }
    }

    #[test]
    fn separated_components_mask() {
        let a = joint_2d([0.0, 0.0], 1.0, 0.5);
        let b = joint_2d([0.0, 20.0], 1.0, 0.5);
        let g = Gmm::new(vec![0.5, 0.5], vec![a, b]).unwrap();
        let m = ConditionalModel::new(g, BlockSplit::new(1), DEFAULT_ALPHA).unwrap();
        let inf = m.infer(&[0.0]).unwrap();
        assert_eq!(inf.mask, vec![true, false]);
        assert_eq!(inf.gmm.weights(), &[1.0, 0.0]);
    }

    #[test]
    fn no_credible_component_uses_marginal_softmax() {
        let a = joint_2d([0.0, 0.0], 1.0, 0.2);
        let b = joint_2d([0.0, 3.0], 2.0, 0.2);
        let g = Gmm::new(vec![0.9, 0.1], vec![a.clone(), b.clone()]).unwrap();
        let w = [30.0];
        let out = ea_cgmm_infer(&g, BlockSplit::new(1), &w, DEFAULT_ALPHA).unwrap();
        // dense oracle: normalized marginal densities, without mixture weights
        let pa = a.marginal_block(BlockSplit::new(1)).unwrap().log_density(&w).unwrap();
        let pb = b.marginal_block(BlockSplit::new(1)).unwrap().log_density(&w).unwrap();
        let wa = 1.0 / (1.0 + (pb - pa).exp());
        assert!((out.weights()[0] - wa).abs() < 1e-12);
    }

    #[test]
    fn surviving_weights_are_uniform() {
        let mut comps = Vec::new();
        for k in 0..4 {
            comps.push(joint_2d([k as f64, 0.1 * k as f64], 1.0, 0.3));
        }
        comps.push(joint_2d([0.0, 50.0], 1.0, 0.3));
        let g = Gmm::new(vec![0.1, 0.2, 0.3, 0.2, 0.2], comps).unwrap();
        let out = ea_cgmm_infer(&g, BlockSplit::new(1), &[0.15], DEFAULT_ALPHA).unwrap();
        assert_eq!(&out.weights()[..4], &[0.25; 4]);
        assert_eq!(out.weights()[4], 0.0);
    }

    #[test]
    fn evidence_from_joint_passes_mask() {
        let mut rng = SeededRng::new(9, 0);
        let c = CholeskyGaussian::from_covariance(vec![0.0, 1.0, -1.0], &[1.0, 0.3, 0.1, 0.3, 2.0, 0.4, 0.1, 0.4, 1.5])
            .unwrap();
        let m = ConditionalModel::new(Gmm::single(c.clone()), BlockSplit::new(1), DEFAULT_ALPHA).unwrap();
        let n = 20_000;
        let pass = (0..n)
            .filter(|_| {
                let x = c.sample(&mut rng);
                m.infer(&x[1..]).unwrap().mask[0]
            })
            .count();
        assert!(pass as f64 / n as f64 >= 1.0 - DEFAULT_ALPHA - 0.02);
    }
}
