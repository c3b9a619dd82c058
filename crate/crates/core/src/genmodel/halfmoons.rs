//! Two half-moon rings as a conditional-generation benchmark: the
//! horizontal coordinate is the condition, the vertical one the target.
//!
//! Samples are stored as `[y, x]` so the condition is the trailing block.

use serde::{Deserialize, Serialize};

use super::eacgmm::ConditionalModel;
use super::vae::{generate_gmm, vae_chmdn_train, VaeChmdn, VaeChmdnSpec, VaeConfig};
use crate::error::Result;
use crate::mathcore::BlockSplit;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HalfMoonsConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub components: usize,
    pub latent: usize,
    pub hidden: usize,
    pub vae: VaeConfig,
    pub alpha: f64,
    /// Conditional draws per held-out condition.
    pub samples_per_condition: usize,
    /// Largest allowed distance from a cluster center to its branch.
    pub tolerance: f64,
}

impl Default for HalfMoonsConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 200,
            noise: 0.05,
            components: 12,
            latent: 2,
            hidden: 32,
            vae: VaeConfig {
                epochs: 200,
                batch_size: 50,
                ..VaeConfig::default()
            },
            alpha: 0.03,
            samples_per_condition: 200,
            tolerance: 0.25,
        }
    }
}

/// `n` noisy points split evenly between the two moons, as `[y, x]`.
pub fn make_moons(n: usize, noise: f64, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let t = rng.uniform() * std::f64::consts::PI;
            let (x, y) = if i % 2 == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            vec![y + noise * rng.normal(), x + noise * rng.normal()]
        })
        .collect()
}

/// Noise-free target values of every branch present at condition `x`.
pub fn branch_values(x: f64) -> Vec<f64> {
    let mut v = Vec::new();
    if (-1.0..=1.0).contains(&x) {
        v.push((1.0 - x * x).sqrt());
    }
    if (0.0..=2.0).contains(&x) {
        let c = 1.0 - x;
        v.push(0.5 - (1.0 - c * c).sqrt());
    }
    v
}

/// Lloyd iterations for two centers on the line, started at the extremes.
pub fn kmeans2_1d(v: &[f64]) -> (f64, f64) {
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for &x in v {
            if x <= mid {
                s0 += x;
                n0 += 1;
            } else {
                s1 += x;
                n1 += 1;
            }
        }
        let nlo = if n0 > 0 { s0 / n0 as f64 } else { lo };
        let nhi = if n1 > 0 { s1 / n1 as f64 } else { hi };
        if nlo == lo && nhi == hi {
            break;
        }
        lo = nlo;
        hi = nhi;
    }
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: f64,
    pub centers: (f64, f64),
    pub branches: (f64, f64),
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfMoonsReport {
    pub coverage: f64,
    pub n_conditions: usize,
    pub conditions: Vec<ConditionResult>,
    /// `(condition, sample)` pairs from every evaluated condition.
    #[serde(skip)]
    pub samples: Vec<(f64, f64)>,
}

pub struct HalfMoonsRun {
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub model: ConditionalModel,
    pub report: HalfMoonsReport,
}

/// Builds the data, fits the joint mixture, and scores branch coverage on
/// held-out conditions inside the two-branch region `x in [0, 1]`.
pub fn run_halfmoons(cfg: &HalfMoonsConfig, seed: u64) -> Result<HalfMoonsRun> {
    let mut rng = SeededRng::new(seed, 0x600d);
    let train = make_moons(cfg.n_train, cfg.noise, &mut rng);
    let test = make_moons(cfg.n_test, cfg.noise, &mut rng);
    let vae = VaeChmdn::new(VaeChmdnSpec::new(2, cfg.latent, cfg.components, cfg.hidden))?;
    let vcfg = VaeConfig {
        seed,
        ..cfg.vae.clone()
    };
    let trained = vae_chmdn_train(&vae, &train, &vcfg)?;
    let joint = generate_gmm(&vae, &trained.params, &mut rng.derive(1))?;
    let model = ConditionalModel::new(joint, BlockSplit { m: 1 }, cfg.alpha)?;

    let mut conditions = Vec::new();
    let mut samples = Vec::new();
    let mut srng = rng.derive(2);
    for row in &test {
        let x = row[1];
        let b = branch_values(x);
        if b.len() < 2 {
            continue;
        }
        let cond = model.infer(&[x])?.gmm;
        let ys: Vec<f64> = (0..cfg.samples_per_condition)
            .map(|_| cond.sample(&mut srng)[0])
            .collect();
        samples.extend(ys.iter().map(|&y| (x, y)));
        let centers = kmeans2_1d(&ys);
        let branches = (b[0].min(b[1]), b[0].max(b[1]));
        let covered =
            (centers.0 - branches.0).abs() <= cfg.tolerance && (centers.1 - branches.1).abs() <= cfg.tolerance;
        conditions.push(ConditionResult {
            condition: x,
            centers,
            branches,
            covered,
        });
    }
    let hit = conditions.iter().filter(|c| c.covered).count();
    let report = HalfMoonsReport {
        coverage: if conditions.is_empty() {
            0.0
        } else {
            hit as f64 / conditions.len() as f64
        },
        n_conditions: conditions.len(),
        conditions,
        samples,
    };
    Ok(HalfMoonsRun {
        train,
        test,
        model,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches_where_both_moons_overlap() {
        let b = branch_values(0.5);
        assert_eq!(b.len(), 2);
        assert!((b[0] - 0.75f64.sqrt()).abs() < 1e-12);
        assert!((b[1] - (0.5 - 0.75f64.sqrt())).abs() < 1e-12);
        assert_eq!(branch_values(-0.5).len(), 1);
        assert_eq!(branch_values(1.5).len(), 1);
    }

    #[test]
    fn kmeans_separates_two_groups() {
        let v: Vec<f64> = (0..50)
            .map(|i| if i % 2 == 0 { -1.0 + 0.01 * i as f64 } else { 3.0 })
            .collect();
        let (lo, hi) = kmeans2_1d(&v);
        assert!((hi - 3.0).abs() < 1e-12);
        assert!((lo - (-0.76)).abs() < 1e-9);
    }

    #[test]
    fn moons_lie_near_their_curves() {
        let pts = make_moons(400, 0.0, &mut SeededRng::new(1, 0));
        for p in pts {
            let b = branch_values(p[1]);
            assert!(b.iter().any(|y| (y - p[0]).abs() < 1e-9));
        }
    }

    #[test]
    fn both_branches_covered() {
        let run = run_halfmoons(&HalfMoonsConfig::default(), 3).unwrap();
        assert!(run.report.n_conditions > 50);
        assert!(run.report.coverage >= 0.9, "{}", run.report.coverage);
    }
}
