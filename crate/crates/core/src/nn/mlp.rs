//! Fully connected networks over a flat parameter slice.
//!
//! Layer `l` stores its weight matrix row-major (`out x in`) followed by
//! its bias vector.

use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::Differentiable;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    /// One activation per hidden layer.
    pub hidden: Vec<Activation>,
    pub output: Activation,
}

impl MlpSpec {
    /// Same activation on every hidden layer.
    pub fn uniform(widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        let n_hidden = widths.len().saturating_sub(2);
        Self {
            widths,
            hidden: vec![hidden; n_hidden],
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Config("MLP needs at least one hidden layer".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("MLP widths must be >= 1".into()));
        }
        if self.hidden.len() != self.widths.len() - 2 {
            return Err(Error::Config("one activation per hidden layer required".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.widths.len() - 1 {
            self.output
        } else {
            self.hidden[layer]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.spec.param_count());
        for w in self.spec.widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for _ in 0..n_in * n_out {
                p.push((2.0 * rng.uniform() - 1.0) * limit);
            }
            p.extend(std::iter::repeat_n(0.0, n_out));
        }
        p
    }

    /// Offset of the final layer's bias vector.
    pub fn output_bias_offset(&self) -> usize {
        let n = self.spec.widths.len();
        self.spec.param_count() - self.spec.widths[n - 1]
    }

    /// Offset of the final layer's weight matrix.
    pub fn output_weight_offset(&self) -> usize {
        let n = self.spec.widths.len();
        self.output_bias_offset() - self.spec.widths[n - 1] * self.spec.widths[n - 2]
    }

    /// Pre-activations of every layer.
    fn forward_tape(&self, params: &[f64], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let widths = &self.spec.widths;
        let mut acts = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for (l, w) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let input = acts.last().expect("input layer");
            let z: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    bias[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let act = self.spec.activation(l);
            acts.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        (pre, acts)
    }
}

impl Differentiable for Mlp {
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
        debug_assert_eq!(x.len(), self.n_inputs());
        let (_, mut acts) = self.forward_tape(params, x);
        acts.pop().expect("output layer")
    }

    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let widths = &self.spec.widths;
        let (pre, acts) = self.forward_tape(params, x);
        let n_layers = widths.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut upstream = dy.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let act = self.spec.activation(l);
            let delta: Vec<f64> = upstream.iter().zip(&pre[l]).map(|(g, &z)| g * act.grad(z)).collect();
            let o = offsets[l];
            let input = &acts[l];
            for j in 0..n_out {
                let d = delta[j];
                if d != 0.0 {
                    let row = &mut grad[o + j * n_in..o + (j + 1) * n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                grad[o + n_in * n_out + j] += d;
            }
            let weights = &params[o..o + n_in * n_out];
            let mut down = vec![0.0; n_in];
            for j in 0..n_out {
                let d = delta[j];
                if d != 0.0 {
                    for (dn, w) in down.iter_mut().zip(&weights[j * n_in..(j + 1) * n_in]) {
                        *dn += d * w;
                    }
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
    fn zero_network_outputs_zero() {
        let mlp = Mlp::new(MlpSpec::uniform(vec![3, 4, 2], Activation::Tanh, Activation::Identity)).unwrap();
        let p = vec![0.0; mlp.n_params()];
        assert_eq!(mlp.forward(&p, &[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
        assert_eq!(mlp.n_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn rejects_missing_hidden_layer() {
        assert!(Mlp::new(MlpSpec::uniform(vec![3, 2], Activation::Tanh, Activation::Identity)).is_err());
    }

    #[test]
    fn linear_output_layer_gradient() {
        // hidden identity makes the net affine; check d/dW of 0.5|y - t|^2 for the last layer
        let mlp = Mlp::new(MlpSpec::uniform(
            vec![2, 2, 1],
            Activation::Identity,
            Activation::Identity,
        ))
        .unwrap();
        let mut rng = SeededRng::new(1, 0);
        let p = mlp.init_params(&mut rng);
        let x = [0.3, -0.7];
        let y = mlp.forward(&p, &x)[0];
        let t = 0.5;
        let mut g = vec![0.0; mlp.n_params()];
        mlp.backward(&p, &x, &[y - t], &mut g);
        // hidden activations h = W1 x + b1
        let h: Vec<f64> = (0..2)
            .map(|j| p[j * 2] * x[0] + p[j * 2 + 1] * x[1] + p[4 + j])
            .collect();
        let w2 = mlp.output_weight_offset();
        assert!((g[w2] - (y - t) * h[0]).abs() < 1e-14);
        assert!((g[w2 + 1] - (y - t) * h[1]).abs() < 1e-14);
        assert!((g[mlp.output_bias_offset()] - (y - t)).abs() < 1e-14);
    }
}
