//! Expectation-maximization for full-covariance mixtures. Serves as an
//! independent reference for the learned mixtures and as a warm start.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gmm::{log_sum_exp, Gmm};
use crate::error::{Error, Result};
use crate::mathcore::{linalg, CholeskyGaussian};
use crate::rng::SeededRng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const ROWS_PER_TASK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Added to every covariance diagonal.
    pub reg: f64,
    pub max_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            reg: 1e-6,
            max_restarts: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    /// Mean per-sample log-likelihood after each E-step.
    pub trace: Vec<f64>,
    pub restarts: usize,
}

struct Dense {
    weight: f64,
    mean: Vec<f64>,
    /// Lower Cholesky factor of the covariance.
    chol: Vec<f64>,
    log_det: f64,
}

fn kmeanspp(data: &[Vec<f64>], g: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut centers = vec![data[rng.index(data.len())].clone()];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut d2: Vec<f64> = data.iter().map(|x| dist(x, &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut idx = data.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.index(data.len())
        };
        centers.push(data[pick].clone());
        let c = centers.last().expect("just pushed");
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(dist(x, c));
        }
    }
    centers
}

fn m_step(data: &[Vec<f64>], resp: &[Vec<f64>], g: usize, reg: f64) -> Option<Vec<Dense>> {
    let n = data[0].len();
    let total = data.len() as f64;
    let mut out = Vec::with_capacity(g);
    for k in 0..g {
        let nk: f64 = resp.iter().map(|r| r[k]).sum();
        if nk < 1e-8 * total.max(1.0) {
            return None;
        }
        let mut mean = vec![0.0; n];
        for (x, r) in data.iter().zip(resp) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r[k] * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut cov = vec![0.0; n * n];
        let mut diff = vec![0.0; n];
        for (x, r) in data.iter().zip(resp) {
            let w = r[k];
            if w < 1e-300 {
                continue;
            }
            for i in 0..n {
                diff[i] = x[i] - mean[i];
            }
            for i in 0..n {
                let wi = w * diff[i];
                for j in 0..=i {
                    cov[i * n + j] += wi * diff[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let v = cov[i * n + j] / nk;
                cov[i * n + j] = v;
                cov[j * n + i] = v;
            }
            cov[i * n + i] += reg;
        }
        let chol = linalg::cholesky_lower(&cov, n)?;
        let log_det = 2.0 * (0..n).map(|i| chol[i * n + i].ln()).sum::<f64>();
        out.push(Dense {
            weight: nk / total,
            mean,
            chol,
            log_det,
        });
    }
    Some(out)
}

fn component_log_density(c: &Dense, x: &[f64]) -> f64 {
    let n = x.len();
    // forward substitution L y = x - mean
    let mut y = vec![0.0; n];
    let mut quad = 0.0;
    for i in 0..n {
        let mut s = x[i] - c.mean[i];
        for j in 0..i {
            s -= c.chol[i * n + j] * y[j];
        }
        y[i] = s / c.chol[i * n + i];
        quad += y[i] * y[i];
    }
    -0.5 * (n as f64 * LN_2PI + c.log_det + quad)
}

/// Responsibilities and mean log-likelihood.
fn e_step(data: &[Vec<f64>], comps: &[Dense]) -> (Vec<Vec<f64>>, f64) {
    let parts: Vec<(Vec<Vec<f64>>, f64)> = data
        .par_chunks(ROWS_PER_TASK)
        .map(|rows| {
            let mut ll = 0.0;
            let resp = rows
                .iter()
                .map(|x| {
                    let lp: Vec<f64> = comps
                        .iter()
                        .map(|c| c.weight.ln() + component_log_density(c, x))
                        .collect();
                    let lse = log_sum_exp(&lp);
                    ll += lse;
                    lp.into_iter().map(|v| (v - lse).exp()).collect()
                })
                .collect();
            (resp, ll)
        })
        .collect();
    let mut resp = Vec::with_capacity(data.len());
    let mut ll = 0.0;
    for (r, l) in parts {
        resp.extend(r);
        ll += l;
    }
    (resp, ll / data.len() as f64)
}

fn to_gmm(comps: &[Dense]) -> Result<Gmm> {
    let n = comps[0].mean.len();
    let mut weights = Vec::with_capacity(comps.len());
    let mut out = Vec::with_capacity(comps.len());
    for c in comps {
        // covariance = L L^T; precision factor U = L^{-T}... taken via the dense route
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| c.chol[i * n + k] * c.chol[j * n + k]).sum();
                cov[i * n + j] = s;
                cov[j * n + i] = s;
            }
        }
        weights.push(c.weight);
        out.push(CholeskyGaussian::from_covariance(c.mean.clone(), &cov)?);
    }
    Gmm::new(weights, out)
}

fn attempt(data: &[Vec<f64>], g: usize, cfg: &EmConfig, rng: &mut SeededRng) -> Option<(Vec<Dense>, Vec<f64>)> {
    let centers = kmeanspp(data, g, rng);
    let resp: Vec<Vec<f64>> = data
        .iter()
        .map(|x| {
            let best = centers
                .iter()
                .enumerate()
                .map(|(k, c)| (k, c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
                .expect("at least one center");
            (0..g).map(|k| if k == best { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let mut comps = m_step(data, &resp, g, cfg.reg)?;
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iter {
        let (resp, ll) = e_step(data, &comps);
        if !ll.is_finite() {
            return None;
        }
        let done = trace
            .last()
            .map(|&prev: &f64| (ll - prev).abs() < cfg.tol * prev.abs().max(1.0))
            .unwrap_or(false);
        trace.push(ll);
        if done {
            break;
        }
        comps = m_step(data, &resp, g, cfg.reg)?;
    }
    Some((comps, trace))
}

pub fn em_fit_with(data: &[Vec<f64>], g: usize, seed: u64, cfg: &EmConfig) -> Result<EmFit> {
    let n = data.first().map(|x| x.len()).unwrap_or(0);
    if g == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "em_fit needs G >= 1 and non-empty vectors".into(),
        ));
    }
    if data.len() < g * (n + 2) {
        return Err(Error::InsufficientData(format!(
            "em_fit needs at least {} samples for G={g}, n={n}; got {}",
            g * (n + 2),
            data.len()
        )));
    }
    if data.iter().any(|x| x.len() != n) {
        return Err(Error::InvalidArgument("em_fit rows differ in length".into()));
    }
    let mut rng = SeededRng::new(seed, 0xe3);
    for restart in 0..=cfg.max_restarts {
        if let Some((comps, trace)) = attempt(data, g, cfg, &mut rng) {
            return Ok(EmFit {
                gmm: to_gmm(&comps)?,
                trace,
                restarts: restart,
            });
        }
        log::debug!("em_fit: singular component, restart {}", restart + 1);
    }
    Err(Error::Numerical(format!(
        "em_fit: singular components after {} restarts",
        cfg.max_restarts
    )))
}

pub fn em_fit(data: &[Vec<f64>], g: usize, seed: u64) -> Result<Gmm> {
    Ok(em_fit_with(data, g, seed, &EmConfig::default())?.gmm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_gaussian_moments() {
        let truth = CholeskyGaussian::from_covariance(vec![1.0, -2.0], &[2.0, 0.6, 0.6, 0.5]).unwrap();
        let mut rng = SeededRng::new(1, 0);
        let n = 5000;
        let data: Vec<Vec<f64>> = (0..n).map(|_| truth.sample(&mut rng)).collect();
        let g = em_fit(&data, 1, 0).unwrap();
        let c = &g.components()[0];
        let cov = c.covariance();
        // 3 standard errors of the sample mean
        assert!((c.mean()[0] - 1.0).abs() < 3.0 * (2.0f64 / n as f64).sqrt());
        assert!((c.mean()[1] + 2.0).abs() < 3.0 * (0.5f64 / n as f64).sqrt());
        let truth_cov = [2.0, 0.6, 0.6, 0.5];
        let diff: f64 = cov
            .iter()
            .zip(&truth_cov)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = truth_cov.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm < 0.1);
    }

    #[test]
    fn separated_clusters_and_monotone_likelihood() {
        let mut rng = SeededRng::new(2, 0);
        let a = CholeskyGaussian::diagonal(vec![-5.0, 0.0], &[0.5, 0.5]).unwrap();
        let b = CholeskyGaussian::diagonal(vec![5.0, 3.0], &[0.7, 0.3]).unwrap();
        let data: Vec<Vec<f64>> = (0..1000)
            .map(|i| {
                if i < 300 {
                    a.sample(&mut rng)
                } else {
                    b.sample(&mut rng)
                }
            })
            .collect();
        let fit = em_fit_with(&data, 2, 4, &EmConfig::default()).unwrap();
        let mut w = fit.gmm.weights().to_vec();
        w.sort_by(|x, y| x.total_cmp(y));
        assert!((w[0] - 0.3).abs() < 0.02 && (w[1] - 0.7).abs() < 0.02);
        for pair in fit.trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "{:?}", pair);
        }
    }

    #[test]
    fn rejects_small_data() {
        let data = vec![vec![0.0, 1.0]; 5];
        assert!(matches!(em_fit(&data, 2, 0), Err(Error::InsufficientData(_))));
    }
}
