//! Oracle suites: every check compares an optimized routine against an
//! independent, slower reference.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::env::phy::finite_blocklength_bits;
use crate::env::{decode_action, Cmdp, Env, EnvConfig, RawAction};
use crate::error::Result;
use crate::genmodel::{VaeChmdn, VaeChmdnSpec};
use crate::mathcore::{chi2_quantile, BlockSplit, CholeskyGaussian};
use crate::nn::{gradient_check, half_sq_grad, half_sq_loss, Activation, Differentiable, Kan, KanSpec, Mlp, MlpSpec};
use crate::rl::{behavior_policy_uniform, gae};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error (or violation count) against the bound.
    pub worst: f64,
    pub bound: f64,
    pub detail: String,
    pub seconds: f64,
}

fn finish(name: &'static str, t: Instant, worst: f64, bound: f64, detail: String) -> SuiteResult {
    SuiteResult {
        name,
        passed: worst <= bound,
        worst,
        bound,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    num / den
}

/// Random SPD joints of size up to 20: block marginals and conditionals
/// from the precision factor against dense Schur complements of the
/// covariance.
pub fn suite_schur(cases: usize, seed: u64) -> Result<SuiteResult> {
    let t = Instant::now();
    let mut rng = SeededRng::new(seed, 0x5c4);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = 2 + rng.index(19);
        let m = 1 + rng.index(n - 1);
        let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * (0.5 * n as f64);
        let mean: Vec<f64> = rng.normal_vec(n);
        let flat: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| cov[(i, j)])
            .collect();
        let g = CholeskyGaussian::from_covariance(mean.clone(), &flat)?;
        let split = BlockSplit::new(m);
        let d = n - m;
        let x2: Vec<f64> = rng.normal_vec(d);

        let s11 = cov.view((0, 0), (m, m));
        let s12 = cov.view((0, m), (m, d));
        let s22 = cov.view((m, m), (d, d)).into_owned();
        let s22_inv = s22.clone().try_inverse().expect("SPD block");
        let diff = DVector::from_iterator(d, x2.iter().zip(&mean[m..]).map(|(a, b)| a - b));
        let mu_c = DVector::from_column_slice(&mean[..m]) + s12 * &s22_inv * diff;
        let cov_c = s11 - s12 * &s22_inv * s12.transpose();

        let marg = g.marginal_block(split)?;
        let cond = g.conditional_block(split, &x2)?;
        let dense = |mat: &DMatrix<f64>| -> Vec<f64> {
            (0..mat.nrows())
                .flat_map(|i| (0..mat.ncols()).map(move |j| mat[(i, j)]))
                .collect()
        };
        worst = worst
            .max(rel(marg.mean(), &mean[m..]))
            .max(rel(&marg.covariance(), &dense(&s22)))
            .max(rel(cond.mean(), mu_c.as_slice()))
            .max(rel(&cond.covariance(), &dense(&cov_c)));
    }
    Ok(finish(
        "schur-complement equivalence",
        t,
        worst,
        1e-8,
        format!("{cases} random SPD joints, n <= 20"),
    ))
}

fn chi2_pdf(d: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * d as f64;
    ((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson integral of `f` over `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Upper-tail quantile by bisection on the quadrature tail mass.
pub fn chi2_quantile_by_quadrature(d: u32, alpha: f64) -> f64 {
    let df = d as f64;
    let top = df + 40.0 * (2.0 * df).sqrt() + 80.0;
    let tail = |q: f64| adaptive_simpson(&|x| chi2_pdf(d, x), q, top, 1e-14);
    let (mut lo, mut hi) = (1e-9, top);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-11 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn suite_chi2() -> Result<SuiteResult> {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for d in 1..=50u32 {
        let q = chi2_quantile(d, 0.03)?;
        worst = worst.max((q - chi2_quantile_by_quadrature(d, 0.03)).abs());
    }
    let spot = chi2_quantile(1, 0.03)?;
    let spot_err = (spot - 4.7093).abs();
    let mut r = finish(
        "chi-squared quantiles",
        t,
        worst,
        1e-6,
        format!("d = 1..50, alpha = 0.03; d = 1 gives {spot:.5}"),
    );
    r.passed &= spot_err < 5e-4;
    Ok(r)
}

/// Finite-blocklength bits recomputed from the normal approximation with
/// an independent inverse Q function.
pub fn suite_blocklength() -> Result<SuiteResult> {
    let t = Instant::now();
    let (gamma, c, n, eps) = (5.0f64, 20.0, 75.0, 1e-6);
    let q_inv = -Normal::standard().inverse_cdf(eps);
    let cn = c * n;
    let v = 1.0 - 1.0 / ((1.0 + gamma) * (1.0 + gamma));
    let reference = cn * (1.0 + gamma).log2() - (cn * v).sqrt() * q_inv / std::f64::consts::LN_2;
    let got = finite_blocklength_bits(cn, crate::mathcore::gaussian_q_inv(eps)?, &[gamma]);
    let err = (got - reference).abs();
    let mut r = finish(
        "finite-blocklength spot check",
        t,
        err,
        0.5,
        format!("psi = {got:.2} bits, reference {reference:.2}"),
    );
    r.passed &= (got - 3615.1).abs() <= 0.5;
    Ok(r)
}

/// Analytic gradients of the MLP, KAN and VAE-ChMDN losses against central
/// differences on random coordinates.
pub fn suite_gradients(coords: usize, seed: u64) -> Result<SuiteResult> {
    let t = Instant::now();
    let mut rng = SeededRng::new(seed, 0x96ad);
    let pick = |n: usize, rng: &mut SeededRng| -> Vec<usize> { (0..coords).map(|_| rng.index(n)).collect() };

    let mlp = Mlp::new(MlpSpec::uniform(
        vec![6, 12, 8, 2],
        Activation::Silu,
        Activation::Identity,
    ))?;
    let p = mlp.init_params(&mut rng);
    let (x, y) = (rng.normal_vec(6), rng.normal_vec(2));
    let cs = pick(mlp.n_params(), &mut rng);
    let e_mlp = gradient_check(
        &p,
        &cs,
        1e-5,
        |q| half_sq_loss(&mlp, q, &x, &y),
        |q| half_sq_grad(&mlp, q, &x, &y),
    );

    let kan = Kan::new(KanSpec::new(vec![4, 5, 1]), None)?;
    let mut p = kan.init_params(&mut rng);
    p.iter_mut().for_each(|v| *v += 0.3 * rng.normal());
    let x: Vec<f64> = (0..4).map(|_| rng.uniform_open(-0.9, 0.9)).collect();
    let y = [0.3];
    let cs = pick(kan.n_params(), &mut rng);
    let e_kan = gradient_check(
        &p,
        &cs,
        1e-5,
        |q| half_sq_loss(&kan, q, &x, &y),
        |q| half_sq_grad(&kan, q, &x, &y),
    );

    let vae = VaeChmdn::new(VaeChmdnSpec::new(3, 2, 3, 8))?;
    let mut p = vae.init_params(&mut rng);
    p.iter_mut().for_each(|v| *v += 0.2 * rng.normal());
    let (x, eps) = (rng.normal_vec(3), rng.normal_vec(2));
    let cs = pick(p.len(), &mut rng);
    let e_vae = gradient_check(
        &p,
        &cs,
        1e-5,
        |q| vae.sample_loss(q, &x, &eps, None).total(),
        |q| {
            let mut g = vec![0.0; q.len()];
            vae.sample_loss(q, &x, &eps, Some(&mut g));
            g
        },
    );
    let worst = e_mlp.max(e_kan).max(e_vae);
    Ok(finish(
        "gradient fidelity",
        t,
        worst,
        1e-4,
        format!("{coords} coordinates each; mlp {e_mlp:.1e}, kan {e_kan:.1e}, vae {e_vae:.1e}"),
    ))
}

/// Random episodes under uniform actions: every arrival is accounted for as
/// delivered, expired, dropped, or still queued, and no AP exceeds its
/// power budget.
pub fn suite_packets(cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<SuiteResult> {
    let t = Instant::now();
    let mut env = Env::new(cfg.clone())?;
    let mut rng = SeededRng::new(seed, 0xbac);
    let p_max = cfg.p_max_watts();
    let mut violations = 0u64;
    let mut slots = 0u64;
    for _ in 0..episodes {
        env.reset(&mut rng);
        for _ in 0..cfg.horizon {
            let a = behavior_policy_uniform(cfg.action_dim(), &mut rng);
            let dec = decode_action(cfg, &RawAction::from_flat(&a)?)?;
            if dec.scheduled_power(cfg).iter().any(|&p| p > p_max * (1.0 + 1e-12)) {
                violations += 1;
            }
            env.step(&a, &mut rng)?;
            slots += 1;
            let l = env.ledger();
            for (u, q) in env.queues().iter().enumerate() {
                if l.arrivals[u] != l.tx[u] + l.vio[u] + l.drop[u] + q.len() as u64 {
                    violations += 1;
                }
                let bits: f64 = q.packets.iter().map(|p| p.remaining_bits).sum();
                if (bits - q.total_bits).abs() > 1e-6 * bits.max(1.0) || q.total_bits > cfg.buffer_bits as f64 {
                    violations += 1;
                }
            }
        }
    }
    Ok(finish(
        "packet conservation and power feasibility",
        t,
        violations as f64,
        0.0,
        format!("{episodes} episodes, {slots} slots"),
    ))
}

fn naive_gae(r: &[f64], v: &[f64], done: &[bool], g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let (mut s, mut w) = (0.0, 1.0);
            for k in t..n {
                let terminal = done[k] || k + 1 == n;
                let nv = if terminal { 0.0 } else { v[k + 1] };
                s += w * (r[k] + g * nv - v[k]);
                if terminal {
                    break;
                }
                w *= g * l;
            }
            s
        })
        .collect()
}

pub fn suite_gae(cases: usize, seed: u64) -> Result<SuiteResult> {
    let t = Instant::now();
    let mut rng = SeededRng::new(seed, 0x9ae);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = 1 + rng.index(120);
        let r = rng.normal_vec(n);
        let v = rng.normal_vec(n);
        let done: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.05).collect();
        let (g, l) = (rng.uniform(), rng.uniform());
        let (a, _) = gae(&r, &v, &done, g, l);
        for (x, y) in a.iter().zip(naive_gae(&r, &v, &done, g, l)) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(finish(
        "gae discounted-sum",
        t,
        worst,
        1e-10,
        format!("{cases} random buffers"),
    ))
}

pub fn run_all(cfg: &EnvConfig, seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        suite_schur(1000, seed)?,
        suite_chi2()?,
        suite_blocklength()?,
        suite_gradients(120, seed)?,
        suite_packets(cfg, 100, seed)?,
        suite_gae(200, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_matches_closed_form_for_two_dof() {
        // upper quantile of chi2(2) is -2 ln alpha
        let q = chi2_quantile_by_quadrature(2, 0.03);
        assert!((q + 2.0 * 0.03f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn fast_suites_pass() {
        for r in [
            suite_schur(50, 1).unwrap(),
            suite_gae(20, 1).unwrap(),
            suite_blocklength().unwrap(),
        ] {
            assert!(r.passed, "{}: {}", r.name, r.worst);
        }
    }
}
