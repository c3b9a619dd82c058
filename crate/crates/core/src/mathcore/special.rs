//! Distribution quantiles: chi-squared upper quantiles and the inverse
//! Gaussian Q-function.

use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn gaussian_q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Acklam's rational approximation to the standard normal quantile.
fn normal_quantile_rational(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// `x` such that `Q(x) = eps`.
pub fn gaussian_q_inv(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Q-function argument {eps} outside (0, 1)"
        )));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    // Q^{-1}(eps) = Phi^{-1}(1 - eps) = -Phi^{-1}(eps)
    let x = -normal_quantile_rational(eps);
    // Newton polish on Q(x) - eps, Q'(x) = -pdf(x)
    Ok(x + (gaussian_q(x) - eps) / std_normal_pdf(x))
}

/// Upper tail of chi-squared with `d` degrees of freedom.
pub fn chi2_sf(d: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(0.5 * d as f64, 0.5 * x)
}

fn chi2_ln_pdf(d: u32, x: f64) -> f64 {
    let k = 0.5 * d as f64;
    (k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)
}

/// Upper `alpha` quantile of chi-squared: `q` with `P(X > q) = alpha`.
///
/// Newton iteration on the regularized upper incomplete gamma, started at the
/// Wilson-Hilferty approximation and safeguarded by a bisection bracket.
pub fn chi2_quantile(d: u32, alpha: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("chi-squared needs d >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "significance level {alpha} outside (0, 1)"
        )));
    }
    let df = d as f64;
    let z = gaussian_q_inv(alpha)?;
    let h = 2.0 / (9.0 * df);
    let mut x = df * (1.0 - h + z * h.sqrt()).powi(3);
    if !(x > 0.0) {
        x = df.max(1e-3) * 0.5;
    }

    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let f = chi2_sf(d, x) - alpha;
        if f > 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        // f is decreasing in x, f'(x) = -pdf(x)
        let pdf = chi2_ln_pdf(d, x).exp();
        let mut next = if pdf > 0.0 { x + f / pdf } else { f64::NAN };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * x.max(1.0)
            };
        }
        if (next - x).abs() <= 1e-14 * x.max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_inverse_spot_values() {
        assert_eq!(gaussian_q_inv(0.5).unwrap(), 0.0);
        assert!((gaussian_q_inv(1e-6).unwrap() - 4.753_424_308_822_899).abs() < 1e-9);
        assert!(gaussian_q_inv(0.0).is_err());
        assert!(gaussian_q_inv(1.0).is_err());
    }

    #[test]
    fn q_round_trip() {
        for k in 1..=9 {
            let e = 10f64.powi(-k);
            let x = gaussian_q_inv(e).unwrap();
            assert!((gaussian_q(x) - e).abs() <= 1e-9 * e.max(1e-9), "eps {e}");
        }
        let x = gaussian_q_inv(0.9).unwrap();
        assert!((gaussian_q(x) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn chi2_two_dof_closed_form() {
        let q = chi2_quantile(2, 0.5).unwrap();
        assert!((q - 2.0 * std::f64::consts::LN_2).abs() < 1e-10);
        for &a in &[0.01, 0.03, 0.2, 0.9] {
            let q = chi2_quantile(2, a).unwrap();
            assert!((q + 2.0 * f64::ln(a)).abs() < 1e-9);
        }
    }

    #[test]
    fn chi2_rejects_bad_arguments() {
        assert!(chi2_quantile(0, 0.1).is_err());
        assert!(chi2_quantile(3, 0.0).is_err());
        assert!(chi2_quantile(3, 1.0).is_err());
    }
}
