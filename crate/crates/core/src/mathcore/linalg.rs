//! Dense triangular kernels on row-major `n x n` slices.

/// Solves `U x = b` for upper-triangular `U` by back-substitution.
pub fn solve_upper(u: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let row = &u[i * n..(i + 1) * n];
        let mut acc = x[i];
        for j in (i + 1)..n {
            acc -= row[j] * x[j];
        }
        x[i] = acc / row[i];
    }
    x
}

/// Solves `U^T x = b` for upper-triangular `U` by forward substitution.
pub fn solve_upper_transpose(u: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let mut acc = x[i];
        for j in 0..i {
            acc -= u[j * n + i] * x[j];
        }
        x[i] = acc / u[i * n + i];
    }
    x
}

/// `U v` for upper-triangular `U`.
pub fn upper_mul_vec(u: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let row = &u[i * n..(i + 1) * n];
            (i..n).map(|j| row[j] * v[j]).sum()
        })
        .collect()
}

/// Lower Cholesky factor `L` with `A = L L^T`, or `None` if `A` is not SPD.
pub fn cholesky_lower(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix, column by column via forward substitution.
pub fn lower_triangular_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for c in 0..n {
        for i in c..n {
            let mut acc = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                acc -= l[i * n + k] * inv[k * n + c];
            }
            inv[i * n + c] = acc / l[i * n + i];
        }
    }
    inv
}

/// Upper-triangular `U` with positive diagonal such that `U^T U = cov^{-1}`.
///
/// Uses the exchange permutation `J`: if `J cov J = L L^T` then
/// `U = J L^{-1} J` satisfies the identity and is upper-triangular.
pub fn precision_factor_from_covariance(cov: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut flipped = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            flipped[i * n + j] = cov[(n - 1 - i) * n + (n - 1 - j)];
        }
    }
    let l = cholesky_lower(&flipped, n)?;
    let linv = lower_triangular_inverse(&l, n);
    let mut u = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            u[i * n + j] = linv[(n - 1 - i) * n + (n - 1 - j)];
        }
    }
    Some(u)
}

/// `U^T U` as a dense row-major matrix.
pub fn gram_upper(u: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k_max = i.min(j);
            let s: f64 = (0..=k_max).map(|k| u[k * n + i] * u[k * n + j]).sum();
            p[i * n + j] = s;
            p[j * n + i] = s;
        }
    }
    p
}

/// Covariance `(U^T U)^{-1} = U^{-1} U^{-T}` built from triangular solves.
pub fn covariance_from_upper(u: &[f64], n: usize) -> Vec<f64> {
    // columns of U^{-1}
    let mut uinv = vec![0.0; n * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = solve_upper(u, n, &e);
        for r in 0..n {
            uinv[r * n + c] = col[r];
        }
    }
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = (j.max(i)..n).map(|k| uinv[i * n + k] * uinv[j * n + k]).sum();
            cov[i * n + j] = s;
            cov[j * n + i] = s;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_solves_invert_products() {
        let u = [2.0, 1.0, -0.5, 0.0, 1.5, 0.3, 0.0, 0.0, 0.7];
        let x = [0.3, -1.2, 2.0];
        let b = upper_mul_vec(&u, 3, &x);
        let back = solve_upper(&u, 3, &b);
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        // U^T x
        let bt: Vec<f64> = (0..3).map(|i| (0..=i).map(|k| u[k * 3 + i] * x[k]).sum()).collect();
        let back = solve_upper_transpose(&u, 3, &bt);
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn precision_factor_round_trip() {
        let cov = [2.0, 1.0, 1.0, 1.0];
        let u = precision_factor_from_covariance(&cov, 2).unwrap();
        assert_eq!(u[2], 0.0);
        assert!((u[0] - 1.0).abs() < 1e-12);
        assert!((u[1] + 1.0).abs() < 1e-12);
        assert!((u[3] - 1.0).abs() < 1e-12);
        let back = covariance_from_upper(&u, 2);
        for (a, b) in back.iter().zip(cov.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_spd_rejected() {
        assert!(cholesky_lower(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
