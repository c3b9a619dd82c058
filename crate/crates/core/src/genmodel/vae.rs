//! VAE whose decoder is a mixture density network emitting full-covariance
//! mixtures in Cholesky-precision form.
//!
//! Decoder output layout, per component: `[logit, mean (n), packed U]` where
//! the packed upper triangle runs row by row and diagonal slots hold `rho`
//! with `U_ii = exp(rho) + DIAG_FLOOR`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::em::em_fit;
use super::gmm::{log_sum_exp, softmax, Gmm};
use crate::error::{check_dim, Error, Result};
use crate::mathcore::{CholeskyGaussian, DIAG_FLOOR};
use crate::nn::adam::{clip_grad_norm, Adam, AdamConfig};
use crate::nn::{Activation, Differentiable, Mlp, MlpSpec};
use crate::rng::SeededRng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// `rho` is clamped here before exponentiation.
const RHO_MAX: f64 = 12.0;
const LOG_SIGMA_MIN: f64 = -8.0;
const LOG_SIGMA_MAX: f64 = 4.0;
const ROWS_PER_TASK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeChmdnSpec {
    pub n: usize,
    pub latent: usize,
    pub components: usize,
    pub encoder: MlpSpec,
    pub decoder: MlpSpec,
}

impl VaeChmdnSpec {
    /// One tanh hidden layer of width `hidden` on both sides.
    pub fn new(n: usize, latent: usize, components: usize, hidden: usize) -> Self {
        Self {
            n,
            latent,
            components,
            encoder: MlpSpec::uniform(vec![n, hidden, 2 * latent], Activation::Tanh, Activation::Identity),
            decoder: MlpSpec::uniform(
                vec![latent, hidden, components * Self::per_component_of(n)],
                Activation::Tanh,
                Activation::Identity,
            ),
        }
    }

    fn per_component_of(n: usize) -> usize {
        1 + n + n * (n + 1) / 2
    }

    pub fn per_component(&self) -> usize {
        Self::per_component_of(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.latent == 0 || self.components == 0 {
            return Err(Error::Config("VAE-ChMDN dims must be positive".into()));
        }
        self.encoder.validate()?;
        self.decoder.validate()?;
        let ew = &self.encoder.widths;
        let dw = &self.decoder.widths;
        if ew[0] != self.n || *ew.last().expect("validated") != 2 * self.latent {
            return Err(Error::Config("encoder must map n -> 2 * latent".into()));
        }
        if dw[0] != self.latent || *dw.last().expect("validated") != self.components * self.per_component() {
            return Err(Error::Config(
                "decoder output width must be G * (1 + n + n(n+1)/2)".into(),
            ));
        }
        Ok(())
    }

    pub fn encoder_len(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }
}

/// Network pair with a flat `[encoder | decoder]` parameter vector.
#[derive(Debug, Clone)]
pub struct VaeChmdn {
    pub spec: VaeChmdnSpec,
    enc: Mlp,
    dec: Mlp,
}

/// Loss split into its two terms for one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLoss {
    pub kl: f64,
    pub nll: f64,
}

impl VaeLoss {
    pub fn total(&self) -> f64 {
        self.kl + self.nll
    }
}

impl VaeChmdn {
    pub fn new(spec: VaeChmdnSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            enc: Mlp::new(spec.encoder.clone())?,
            dec: Mlp::new(spec.decoder.clone())?,
            spec,
        })
    }

    pub fn init_params(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut p = self.enc.init_params(rng);
        p.extend(self.dec.init_params(rng));
        p
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.spec.encoder_len())
    }

    /// Mixture from raw decoder outputs.
    pub fn gmm_from_output(&self, out: &[f64]) -> Result<Gmm> {
        let n = self.spec.n;
        let per = self.spec.per_component();
        check_dim(self.spec.components * per, out.len(), "decoder output")?;
        let logits: Vec<f64> = out.chunks_exact(per).map(|c| c[0]).collect();
        let comps = out
            .chunks_exact(per)
            .map(|blk| {
                let mean = blk[1..1 + n].to_vec();
                let mut u = vec![0.0; n * n];
                let mut k = 1 + n;
                for i in 0..n {
                    for j in i..n {
                        u[i * n + j] = if i == j {
                            blk[k].clamp(-RHO_MAX, RHO_MAX).exp() + DIAG_FLOOR
                        } else {
                            blk[k]
                        };
                        k += 1;
                    }
                }
                CholeskyGaussian::new(mean, u)
            })
            .collect::<Result<Vec<_>>>()?;
        Gmm::new(softmax(&logits), comps)
    }

    pub fn decode(&self, params: &[f64], z: &[f64]) -> Result<Gmm> {
        check_dim(self.spec.latent, z.len(), "latent vector")?;
        let (_, pd) = self.split(params);
        self.gmm_from_output(&self.dec.forward(pd, z))
    }

    /// Encoder mean and clamped log standard deviation.
    pub fn encode(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (pe, _) = self.split(params);
        let h = self.enc.forward(pe, x);
        let l = self.spec.latent;
        let s = h[l..].iter().map(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)).collect();
        (h[..l].to_vec(), s)
    }

    /// Loss for one sample at a fixed reparameterization noise `eps`.
    /// When `grad` is given, the gradient is accumulated into it.
    pub fn sample_loss(&self, params: &[f64], x: &[f64], eps: &[f64], grad: Option<&mut [f64]>) -> VaeLoss {
        let n = self.spec.n;
        let l = self.spec.latent;
        let per = self.spec.per_component();
        let g_count = self.spec.components;
        let (pe, pd) = self.split(params);
        let h = self.enc.forward(pe, x);
        let mu = &h[..l];
        let s_raw = &h[l..];
        let s: Vec<f64> = s_raw.iter().map(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)).collect();
        let sigma: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let z: Vec<f64> = (0..l).map(|i| mu[i] + sigma[i] * eps[i]).collect();
        let kl = 0.5
            * (0..l)
                .map(|i| mu[i] * mu[i] + sigma[i] * sigma[i] - 1.0 - 2.0 * s[i])
                .sum::<f64>();

        let out = self.dec.forward(pd, &z);
        let logits: Vec<f64> = out.chunks_exact(per).map(|c| c[0]).collect();
        let lse_logits = log_sum_exp(&logits);
        // per component: residual e, whitened w, diag entries
        let mut totals = Vec::with_capacity(g_count);
        let mut cache = Vec::with_capacity(g_count);
        for (g, blk) in out.chunks_exact(per).enumerate() {
            let mean = &blk[1..1 + n];
            let e: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
            let mut w = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut log_det = 0.0;
            let mut k = 1 + n;
            for i in 0..n {
                let rho = blk[k];
                let uii = rho.clamp(-RHO_MAX, RHO_MAX).exp() + DIAG_FLOOR;
                diag[i] = uii;
                log_det += uii.ln();
                let mut acc = uii * e[i];
                k += 1;
                for j in i + 1..n {
                    acc += blk[k] * e[j];
                    k += 1;
                }
                w[i] = acc;
            }
            let quad: f64 = w.iter().map(|v| v * v).sum();
            let lp = -0.5 * n as f64 * LN_2PI - 0.5 * quad + log_det;
            totals.push(logits[g] - lse_logits + lp);
            cache.push((e, w, diag));
        }
        let nll = -log_sum_exp(&totals);
        let loss = VaeLoss { kl, nll };
        let Some(grad) = grad else {
            return loss;
        };

        let gamma = softmax(&totals);
        let pi = softmax(&logits);
        let mut d_out = vec![0.0; out.len()];
        for (g, blk) in out.chunks_exact(per).enumerate() {
            let (e, w, diag) = &cache[g];
            let gm = gamma[g];
            let d = &mut d_out[g * per..(g + 1) * per];
            d[0] = pi[g] - gm;
            if gm == 0.0 {
                continue;
            }
            // mean: -gamma U^T w
            let mut k = 1 + n;
            for i in 0..n {
                for j in i..n {
                    let u = if i == j { diag[i] } else { blk[k] };
                    d[1 + j] -= gm * u * w[i];
                    d[k] = if i == j {
                        let rho = blk[k];
                        let inside = (-RHO_MAX..=RHO_MAX).contains(&rho);
                        if inside {
                            gm * (w[i] * e[i] - 1.0 / diag[i]) * rho.exp()
                        } else {
                            0.0
                        }
                    } else {
                        gm * w[i] * e[j]
                    };
                    k += 1;
                }
            }
        }
        let (ge, gd) = grad.split_at_mut(self.spec.encoder_len());
        let dz = self.dec.backward(pd, &z, &d_out, gd);
        let mut dh = vec![0.0; 2 * l];
        for i in 0..l {
            dh[i] = mu[i] + dz[i];
            let inside = (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&s_raw[i]);
            dh[l + i] = if inside {
                sigma[i] * sigma[i] - 1.0 + dz[i] * eps[i] * sigma[i]
            } else {
                0.0
            };
        }
        self.enc.backward(pe, x, &dh, ge);
        loss
    }

    /// Sets the decoder output bias to encode `gmm` and shrinks the output
    /// weights, so every latent decodes close to `gmm`.
    pub fn warm_start(&self, params: &mut [f64], gmm: &Gmm, weight_scale: f64) -> Result<()> {
        let n = self.spec.n;
        check_dim(n, gmm.dim(), "warm-start mixture dimension")?;
        check_dim(self.spec.components, gmm.len(), "warm-start component count")?;
        let per = self.spec.per_component();
        let (_, pd) = params.split_at_mut(self.spec.encoder_len());
        let bias_off = self.dec.output_bias_offset();
        let w_off = self.dec.output_weight_offset();
        pd[w_off..bias_off].iter_mut().for_each(|v| *v *= weight_scale);
        let bias = &mut pd[bias_off..];
        for (g, (w, c)) in gmm.weights().iter().zip(gmm.components()).enumerate() {
            let blk = &mut bias[g * per..(g + 1) * per];
            blk[0] = w.max(1e-300).ln();
            blk[1..1 + n].copy_from_slice(c.mean());
            let u = c.chol_factor();
            let mut k = 1 + n;
            for i in 0..n {
                for j in i..n {
                    blk[k] = if i == j {
                        (u[i * n + i] - DIAG_FLOOR).max(1e-12).ln().clamp(-RHO_MAX, RHO_MAX)
                    } else {
                        u[i * n + j]
                    };
                    k += 1;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: f64,
    /// Initialize the decoder output from an EM fit of the training data.
    pub warm_start: bool,
    pub warm_start_weight_scale: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 256,
            epochs: 20,
            seed: 0,
            grad_clip: 10.0,
            warm_start: true,
            warm_start_weight_scale: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VaeTrained {
    pub params: Vec<f64>,
    /// Mean per-sample loss terms per epoch.
    pub history: Vec<VaeLoss>,
}

/// Minibatch Adam on KL + mixture NLL with gradient clipping.
pub fn vae_chmdn_train(model: &VaeChmdn, data: &[Vec<f64>], cfg: &VaeConfig) -> Result<VaeTrained> {
    if data.is_empty() {
        return Err(Error::InsufficientData("VAE-ChMDN needs training data".into()));
    }
    for row in data {
        check_dim(model.spec.n, row.len(), "VAE-ChMDN sample")?;
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(Error::Config(
            "VAE learning rate and batch size must be positive".into(),
        ));
    }
    let mut rng = SeededRng::new(cfg.seed, 0x7ae);
    let mut params = model.init_params(&mut rng);
    if cfg.warm_start {
        let gmm = em_fit(data, model.spec.components, cfg.seed)?;
        model.warm_start(&mut params, &gmm, cfg.warm_start_weight_scale)?;
    }
    let mut opt = Adam::new(
        params.len(),
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let l = model.spec.latent;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut acc = VaeLoss::default();
        for batch in order.chunks(cfg.batch_size) {
            let eps: Vec<Vec<f64>> = batch.iter().map(|_| rng.normal_vec(l)).collect();
            let rows: Vec<(usize, &Vec<f64>)> = batch.iter().copied().zip(&eps).collect();
            let parts: Vec<(VaeLoss, Vec<f64>)> = rows
                .par_chunks(ROWS_PER_TASK)
                .map(|chunk| {
                    let mut g = vec![0.0; params.len()];
                    let mut loss = VaeLoss::default();
                    for (r, e) in chunk {
                        let v = model.sample_loss(&params, &data[*r], e, Some(&mut g));
                        loss.kl += v.kl;
                        loss.nll += v.nll;
                    }
                    (loss, g)
                })
                .collect();
            let mut grad = vec![0.0; params.len()];
            let mut batch_loss = VaeLoss::default();
            for (lv, g) in parts {
                batch_loss.kl += lv.kl;
                batch_loss.nll += lv.nll;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            if !batch_loss.total().is_finite() {
                return Err(Error::Numerical(format!(
                    "VAE-ChMDN loss became non-finite in epoch {epoch}"
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            clip_grad_norm(&mut grad, cfg.grad_clip);
            opt.step(&mut params, &grad);
            acc.kl += batch_loss.kl;
            acc.nll += batch_loss.nll;
        }
        acc.kl /= data.len() as f64;
        acc.nll /= data.len() as f64;
        log::debug!("vae epoch {epoch}: kl {:.4} nll {:.4}", acc.kl, acc.nll);
        history.push(acc);
    }
    Ok(VaeTrained { params, history })
}

/// One decoder pass at a fresh latent draw.
pub fn generate_gmm(model: &VaeChmdn, params: &[f64], rng: &mut SeededRng) -> Result<Gmm> {
    let z = rng.normal_vec(model.spec.latent);
    model.decode(params, &z)
}

/// Mean negative log-likelihood per sample.
pub fn mean_nll(gmm: &Gmm, data: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for x in data {
        total -= gmm.log_likelihood(x)?;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::mmd_sq_median;
    use crate::nn::gradient_check;

    #[test]
    fn output_width_invariant() {
        let spec = VaeChmdnSpec::new(3, 2, 4, 8);
        assert_eq!(spec.decoder.widths[2], 4 * (1 + 3 + 6));
        spec.validate().unwrap();
        let mut bad = spec.clone();
        bad.decoder.widths[2] += 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kl_vanishes_at_standard_normal() {
        // zero encoder weights and biases give mu = 0, log sigma = 0
        let model = VaeChmdn::new(VaeChmdnSpec::new(2, 2, 2, 4)).unwrap();
        let mut rng = SeededRng::new(1, 0);
        let mut p = model.init_params(&mut rng);
        let ne = model.spec.encoder_len();
        p[..ne].iter_mut().for_each(|v| *v = 0.0);
        let loss = model.sample_loss(&p, &[0.3, -0.2], &[0.5, 0.1], None);
        assert_eq!(loss.kl, 0.0);
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let model = VaeChmdn::new(VaeChmdnSpec::new(3, 2, 3, 5)).unwrap();
        let mut rng = SeededRng::new(2, 0);
        let mut p = model.init_params(&mut rng);
        // nonzero decoder biases so every component matters
        for v in p.iter_mut() {
            *v += 0.2 * rng.normal();
        }
        let x = [0.4, -0.3, 0.9];
        let eps = [0.7, -1.1];
        let coords: Vec<usize> = (0..150).map(|_| rng.index(p.len())).collect();
        let err = gradient_check(
            &p,
            &coords,
            1e-5,
            |q| model.sample_loss(q, &x, &eps, None).total(),
            |q| {
                let mut g = vec![0.0; q.len()];
                model.sample_loss(q, &x, &eps, Some(&mut g));
                g
            },
        );
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn loss_matches_decoded_mixture() {
        let model = VaeChmdn::new(VaeChmdnSpec::new(2, 2, 2, 4)).unwrap();
        let mut rng = SeededRng::new(3, 0);
        let p = model.init_params(&mut rng);
        let x = [0.1, 0.2];
        let eps = [0.3, -0.4];
        let (mu, s) = model.encode(&p, &x);
        let z: Vec<f64> = (0..2).map(|i| mu[i] + s[i].exp() * eps[i]).collect();
        let gmm = model.decode(&p, &z).unwrap();
        let loss = model.sample_loss(&p, &x, &eps, None);
        assert!((loss.nll + gmm.log_likelihood(&x).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let model = VaeChmdn::new(VaeChmdnSpec::new(2, 2, 3, 4)).unwrap();
        let p = model.init_params(&mut SeededRng::new(4, 0));
        let a = generate_gmm(&model, &p, &mut SeededRng::new(5, 0)).unwrap();
        let b = generate_gmm(&model, &p, &mut SeededRng::new(5, 0)).unwrap();
        assert_eq!(a, b);
        assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for c in a.components() {
            assert!((0..2).all(|i| c.chol_factor()[i * 2 + i] > 0.0));
        }
    }

    #[test]
    fn single_gaussian_nll_near_entropy() {
        let truth = CholeskyGaussian::from_covariance(vec![0.2, -0.1], &[0.5, 0.2, 0.2, 0.3]).unwrap();
        let mut rng = SeededRng::new(6, 0);
        let train: Vec<Vec<f64>> = (0..2000).map(|_| truth.sample(&mut rng)).collect();
        let test: Vec<Vec<f64>> = (0..2000).map(|_| truth.sample(&mut rng)).collect();
        let model = VaeChmdn::new(VaeChmdnSpec::new(2, 2, 2, 16)).unwrap();
        let cfg = VaeConfig {
            warm_start: false,
            epochs: 60,
            batch_size: 64,
            lr: 3e-3,
            ..Default::default()
        };
        let out = vae_chmdn_train(&model, &train, &cfg).unwrap();
        let gmm = generate_gmm(&model, &out.params, &mut SeededRng::new(7, 0)).unwrap();
        // differential entropy of N(mu, S) is 0.5 ln((2 pi e)^n |S|)
        let det = 0.5 * 0.3 - 0.2 * 0.2;
        let entropy = 0.5 * (2.0 * (1.0 + LN_2PI) + f64::ln(det));
        let nll = mean_nll(&gmm, &test).unwrap();
        assert!((nll - entropy) / 2.0 < 0.1, "nll {nll} entropy {entropy}");
    }

    #[test]
    fn bimodal_generation_beats_moment_matched_gaussian() {
        let a = CholeskyGaussian::diagonal(vec![-1.5, 0.0], &[0.3, 0.3]).unwrap();
        let b = CholeskyGaussian::diagonal(vec![1.5, 0.5], &[0.3, 0.3]).unwrap();
        let mut rng = SeededRng::new(8, 0);
        let draw = |n: usize, rng: &mut SeededRng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| if i % 2 == 0 { a.sample(rng) } else { b.sample(rng) })
                .collect()
        };
        let train = draw(1000, &mut rng);
        let heldout = draw(2000, &mut rng);
        let model = VaeChmdn::new(VaeChmdnSpec::new(2, 2, 2, 16)).unwrap();
        let cfg = VaeConfig {
            epochs: 20,
            batch_size: 64,
            ..Default::default()
        };
        let out = vae_chmdn_train(&model, &train, &cfg).unwrap();
        let gmm = generate_gmm(&model, &out.params, &mut SeededRng::new(9, 0)).unwrap();
        let gen: Vec<Vec<f64>> = (0..2000).map(|_| gmm.sample(&mut rng)).collect();
        let single = em_fit(&train, 1, 0).unwrap();
        let base: Vec<Vec<f64>> = (0..2000).map(|_| single.sample(&mut rng)).collect();
        let m_gen = mmd_sq_median(&gen, &heldout).unwrap();
        let m_base = mmd_sq_median(&base, &heldout).unwrap();
        assert!(m_gen < m_base, "{m_gen} vs {m_base}");
    }
}
