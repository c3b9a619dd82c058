//! Kolmogorov-Arnold network: every edge carries a learnable univariate
//! function `phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x)` and every node
//! sums its incoming edges.
//!
//! Per-edge parameters are laid out `[w_b, w_s, c_0 .. c_{g+d-1}]`; edges of
//! layer `l` are ordered output-major (`j * n_in + i`).

use serde::{Deserialize, Serialize};

use super::activation::{silu, silu_grad};
use super::Differentiable;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanSpec {
    pub widths: Vec<usize>,
    pub grid_size: usize,
    pub spline_order: usize,
    /// Weight of the uniform grid when blending with the data-quantile grid.
    pub grid_eps: f64,
    pub grid_range: (f64, f64),
}

impl KanSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        Self {
            widths,
            grid_size: 10,
            spline_order: 3,
            grid_eps: 0.1,
            grid_range: (-1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config("KAN widths must have >= 2 positive entries".into()));
        }
        if self.grid_size == 0 || self.spline_order == 0 {
            return Err(Error::Config("KAN grid size and spline order must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.grid_eps) {
            return Err(Error::Config("grid_eps must lie in [0, 1]".into()));
        }
        if !(self.grid_range.0 < self.grid_range.1) {
            return Err(Error::Config("empty KAN grid range".into()));
        }
        Ok(())
    }

    pub fn n_basis(&self) -> usize {
        self.grid_size + self.spline_order
    }

    pub fn params_per_edge(&self) -> usize {
        self.n_basis() + 2
    }

    /// `sum_l n_l * n_{l+1} * (g + d + 2)`.
    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] * self.params_per_edge())
            .sum()
    }
}

/// Knot vector with `g` interior intervals extended by `d` knots per side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knots {
    pub t: Vec<f64>,
    pub order: usize,
    pub intervals: usize,
}

impl Knots {
    /// Extends interior points `grid[0..=g]` by `order` knots each side using
    /// the mean interior spacing.
    pub fn from_interior(grid: &[f64], order: usize) -> Self {
        let g = grid.len() - 1;
        let h = (grid[g] - grid[0]) / g as f64;
        let mut t = Vec::with_capacity(g + 2 * order + 1);
        for p in (1..=order).rev() {
            t.push(grid[0] - p as f64 * h);
        }
        t.extend_from_slice(grid);
        for p in 1..=order {
            t.push(grid[g] + p as f64 * h);
        }
        Self { t, order, intervals: g }
    }

    pub fn uniform(lo: f64, hi: f64, g: usize, order: usize) -> Self {
        let grid: Vec<f64> = (0..=g).map(|j| lo + (hi - lo) * j as f64 / g as f64).collect();
        Self::from_interior(&grid, order)
    }

    pub fn lo(&self) -> f64 {
        self.t[self.order]
    }

    pub fn hi(&self) -> f64 {
        self.t[self.order + self.intervals]
    }

    pub fn n_basis(&self) -> usize {
        self.intervals + self.order
    }

    /// Span `s` with `t_s <= x < t_{s+1}`, restricted to the interior.
    fn span(&self, x: f64) -> usize {
        let d = self.order;
        let last = d + self.intervals - 1;
        if x >= self.t[last] {
            return last;
        }
        // binary search over the interior knots
        let (mut lo, mut hi) = (d, last);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.t[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Non-zero basis values of degree `p` at span `s`: indices `s-p..=s`.
    fn basis_funs(&self, s: usize, x: f64, p: usize) -> Vec<f64> {
        let t = &self.t;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Clamps `x` into the interior range; the flag reports whether it was inside.
    pub fn clamp(&self, x: f64) -> (f64, bool) {
        let (lo, hi) = (self.lo(), self.hi());
        if x < lo {
            (lo, false)
        } else if x > hi {
            (hi, false)
        } else {
            (x, true)
        }
    }

    /// All `g + d` basis values at `x` (clamped into the grid).
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let (xc, _) = self.clamp(x);
        let s = self.span(xc);
        let vals = self.basis_funs(s, xc, self.order);
        let mut out = vec![0.0; self.n_basis()];
        for (r, v) in vals.into_iter().enumerate() {
            out[s - self.order + r] = v;
        }
        out
    }

    /// Basis values and their derivatives with respect to `x`. Derivatives
    /// vanish outside the grid, where the input is clamped.
    pub fn basis_with_grad(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let (xc, inside) = self.clamp(x);
        let p = self.order;
        let s = self.span(xc);
        let vals = self.basis_funs(s, xc, p);
        let mut out = vec![0.0; self.n_basis()];
        for (r, v) in vals.iter().enumerate() {
            out[s - p + r] = *v;
        }
        let mut dout = vec![0.0; self.n_basis()];
        if inside {
            let t = &self.t;
            let lower = self.basis_funs(s, xc, p - 1);
            // lower[r] is N_{s-p+1+r, p-1}
            let low = |i: isize| -> f64 {
                let r = i - (s as isize - p as isize + 1);
                if r >= 0 && (r as usize) < lower.len() {
                    lower[r as usize]
                } else {
                    0.0
                }
            };
            for i in (s - p)..=s {
                let ii = i as isize;
                let a = t[i + p] - t[i];
                let b = t[i + p + 1] - t[i + 1];
                let mut d = 0.0;
                if a != 0.0 {
                    d += p as f64 / a * low(ii);
                }
                if b != 0.0 {
                    d -= p as f64 / b * low(ii + 1);
                }
                dout[i] = d;
            }
        }
        (out, dout)
    }
}

/// Free-function form over a uniform grid on `[lo, hi]`.
pub fn bspline_basis(x: f64, lo: f64, hi: f64, grid_size: usize, order: usize) -> Vec<f64> {
    Knots::uniform(lo, hi, grid_size, order).basis(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kan {
    pub spec: KanSpec,
    /// `grids[l][i]`: knots for input node `i` of layer `l`.
    pub grids: Vec<Vec<Knots>>,
}

impl Kan {
    /// Builds grids; the first layer blends uniform and data-quantile grids
    /// when sample inputs are given, deeper layers use uniform grids.
    pub fn new(spec: KanSpec, sample_inputs: Option<&[Vec<f64>]>) -> Result<Self> {
        spec.validate()?;
        let (lo, hi) = spec.grid_range;
        let g = spec.grid_size;
        let d = spec.spline_order;
        let mut grids = Vec::with_capacity(spec.widths.len() - 1);
        for (l, w) in spec.widths.windows(2).enumerate() {
            let n_in = w[0];
            let layer: Vec<Knots> = (0..n_in)
                .map(|i| match (l, sample_inputs) {
                    (0, Some(data)) if !data.is_empty() => {
                        let mut col: Vec<f64> = data.iter().map(|row| row[i].clamp(lo, hi)).collect();
                        col.sort_by(|a, b| a.total_cmp(b));
                        let interior: Vec<f64> = (0..=g)
                            .map(|j| {
                                let uniform = lo + (hi - lo) * j as f64 / g as f64;
                                let q = if j == 0 {
                                    lo
                                } else if j == g {
                                    hi
                                } else {
                                    let pos = j as f64 / g as f64 * (col.len() - 1) as f64;
                                    col[pos.round() as usize]
                                };
                                spec.grid_eps * uniform + (1.0 - spec.grid_eps) * q
                            })
                            .collect();
                        Knots::from_interior(&interior, d)
                    }
                    _ => Knots::uniform(lo, hi, g, d),
                })
                .collect();
            grids.push(layer);
        }
        Ok(Self { spec, grids })
    }

    pub fn init_params(&self, rng: &mut SeededRng) -> Vec<f64> {
        let nb = self.spec.n_basis();
        let mut p = Vec::with_capacity(self.spec.param_count());
        for w in self.spec.widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let scale = 1.0 / (n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                p.push(scale * (2.0 * rng.uniform() - 1.0));
                p.push(scale);
                for _ in 0..nb {
                    p.push(0.1 * scale * rng.normal());
                }
            }
        }
        p
    }

    fn layer_forward(&self, l: usize, params: &[f64], x: &[f64]) -> Vec<f64> {
        let n_in = self.spec.widths[l];
        let n_out = self.spec.widths[l + 1];
        let pe = self.spec.params_per_edge();
        let bases: Vec<Vec<f64>> = (0..n_in).map(|i| self.grids[l][i].basis(x[i])).collect();
        let silus: Vec<f64> = x.iter().map(|&v| silu(v)).collect();
        (0..n_out)
            .map(|j| {
                (0..n_in)
                    .map(|i| {
                        let e = &params[(j * n_in + i) * pe..(j * n_in + i + 1) * pe];
                        let spline: f64 = e[2..].iter().zip(&bases[i]).map(|(c, b)| c * b).sum();
                        e[0] * silus[i] + e[1] * spline
                    })
                    .sum()
            })
            .collect()
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let pe = self.spec.params_per_edge();
        let mut offs = Vec::new();
        let mut off = 0;
        for w in self.spec.widths.windows(2) {
            offs.push(off);
            off += w[0] * w[1] * pe;
        }
        offs
    }
}

impl Differentiable for Kan {
    fn n_inputs(&self) -> usize {
        self.spec.widths[0]
    }

    fn n_outputs(&self) -> usize {
        *self.spec.widths.last().expect("validated widths")
    }

    fn n_params(&self) -> usize {
        self.spec.param_count()
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let offs = self.layer_offsets();
        let mut h = x.to_vec();
        for l in 0..self.spec.widths.len() - 1 {
            h = self.layer_forward(l, &params[offs[l]..], &h);
        }
        h
    }

    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let offs = self.layer_offsets();
        let n_layers = self.spec.widths.len() - 1;
        let mut inputs = vec![x.to_vec()];
        for l in 0..n_layers - 1 {
            let next = self.layer_forward(l, &params[offs[l]..], &inputs[l]);
            inputs.push(next);
        }
        let pe = self.spec.params_per_edge();
        let mut upstream = dy.to_vec();
        for l in (0..n_layers).rev() {
            let n_in = self.spec.widths[l];
            let n_out = self.spec.widths[l + 1];
            let xin = &inputs[l];
            let p = &params[offs[l]..];
            let g = &mut grad[offs[l]..];
            let mut down = vec![0.0; n_in];
            for i in 0..n_in {
                let (basis, dbasis) = self.grids[l][i].basis_with_grad(xin[i]);
                let s = silu(xin[i]);
                let ds = silu_grad(xin[i]);
                for j in 0..n_out {
                    let dyj = upstream[j];
                    if dyj == 0.0 {
                        continue;
                    }
                    let base = (j * n_in + i) * pe;
                    let e = &p[base..base + pe];
                    let mut spline = 0.0;
                    let mut dspline = 0.0;
                    for k in 0..basis.len() {
                        spline += e[2 + k] * basis[k];
                        dspline += e[2 + k] * dbasis[k];
                        g[base + 2 + k] += dyj * e[1] * basis[k];
                    }
                    g[base] += dyj * s;
                    g[base + 1] += dyj * spline;
                    down[i] += dyj * (e[0] * ds + e[1] * dspline);
                }
            }
            upstream = down;
        }
        upstream
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_basis_at_knot() {
        let knots = Knots::uniform(-1.0, 1.0, 4, 1);
        let b = knots.basis(0.0);
        assert_eq!(b.len(), 5);
        let nonzero: Vec<_> = b.iter().filter(|&&v| v != 0.0).collect();
        assert_eq!(nonzero, vec![&1.0]);
    }

    #[test]
    fn partition_of_unity() {
        let knots = Knots::uniform(-1.0, 1.0, 10, 3);
        for k in 0..=200 {
            let x = -1.0 + 2.0 * k as f64 / 200.0;
            let s: f64 = knots.basis(x).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12, "x={x}");
            assert!(knots.basis(x).iter().all(|&v| v >= 0.0));
        }
    }

    // textbook recursion, half-open intervals with the right end closed
    fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64, right_end: f64) -> f64 {
        if p == 0 {
            let inside = t[i] <= x && x < t[i + 1];
            let at_end = x == right_end && t[i + 1] == right_end && t[i] < t[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let a = t[i + p] - t[i];
        if a > 0.0 {
            v += (x - t[i]) / a * cox_de_boor(t, i, p - 1, x, right_end);
        }
        let b = t[i + p + 1] - t[i + 1];
        if b > 0.0 {
            v += (t[i + p + 1] - x) / b * cox_de_boor(t, i + 1, p - 1, x, right_end);
        }
        v
    }

    #[test]
    fn matches_recursive_definition() {
        let knots = Knots::uniform(-1.0, 1.0, 10, 3);
        let mut rng = SeededRng::new(5, 0);
        for _ in 0..1000 {
            let x = rng.uniform_open(-1.0, 1.0);
            let b = knots.basis(x);
            for (i, v) in b.iter().enumerate() {
                let o = cox_de_boor(&knots.t, i, 3, x, knots.hi());
                assert!((v - o).abs() <= 1e-12, "x={x} i={i}");
            }
        }
    }

    #[test]
    fn outside_grid_is_clamped() {
        let knots = Knots::uniform(-1.0, 1.0, 5, 3);
        assert_eq!(knots.basis(3.0), knots.basis(1.0));
        assert_eq!(knots.basis(-7.0), knots.basis(-1.0));
        let (_, d) = knots.basis_with_grad(3.0);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn basis_derivative_matches_differences() {
        let knots = Knots::uniform(-1.0, 1.0, 7, 3);
        for &x in &[-0.93, -0.41, 0.05, 0.66] {
            let (_, d) = knots.basis_with_grad(x);
            let h = 1e-6;
            let bp = knots.basis(x + h);
            let bm = knots.basis(x - h);
            for k in 0..d.len() {
                assert!(((bp[k] - bm[k]) / (2.0 * h) - d[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn silu_only_edge() {
        let mut spec = KanSpec::new(vec![1, 1]);
        spec.grid_size = 5;
        let kan = Kan::new(spec, None).unwrap();
        let mut p = vec![0.0; kan.n_params()];
        p[0] = 1.0;
        assert_eq!(kan.forward(&p, &[0.0]), vec![0.0]);
        let y = kan.forward(&p, &[0.8])[0];
        assert!((y - silu(0.8)).abs() < 1e-15);
    }

    #[test]
    fn parameter_count_formula() {
        let spec = KanSpec::new(vec![109, 14, 1]);
        assert_eq!(spec.params_per_edge(), 15);
        assert_eq!(spec.param_count(), 23_100);
        assert_eq!(Kan::new(spec, None).unwrap().n_params(), 23_100);
    }

    #[test]
    fn quantile_grid_is_increasing() {
        let data: Vec<Vec<f64>> = (0..100).map(|i| vec![if i < 90 { 0.0 } else { 0.5 }]).collect();
        let kan = Kan::new(KanSpec::new(vec![1, 1]), Some(&data)).unwrap();
        let t = &kan.grids[0][0].t;
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }
}
