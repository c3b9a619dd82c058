//! Trainable function kernels: MLP and KAN regressors over flat parameter
//! vectors, with analytic backprop, scalers, Adam and a minibatch trainer.

pub mod activation;
pub mod adam;
pub mod kan;
pub mod mlp;
pub mod model;
pub mod params;
pub mod scaler;
pub mod train;

pub use activation::Activation;
pub use adam::{Adam, AdamConfig};
pub use kan::{bspline_basis, Kan, KanSpec, Knots};
pub use mlp::{Mlp, MlpSpec};
pub use model::{Regressor, RegressorFile, MODEL_FILE_VERSION};
pub use params::ParamVector;
pub use scaler::{MinMaxScaler, Standardizer};
pub use train::{train_regressor, Loss, RegressionReport, TrainConfig, TrainedRegressor};

/// A function `y = f(params, x)` with exact reverse-mode gradients.
pub trait Differentiable {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn n_params(&self) -> usize;
    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64>;
    /// Accumulates `dL/dparams` into `grad` and returns `dL/dx`.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64>;
}

/// Worst relative error between analytic and central-difference gradients of
/// `loss` over the given parameter coordinates.
///
/// Relative error is `|a - n| / max(|a| + |n|, 1e-7)` so coordinates with a
/// vanishing gradient do not blow up the ratio.
pub fn gradient_check<F, G>(params: &[f64], coords: &[usize], step: f64, loss: F, grad: G) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad(params);
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for &c in coords {
        let orig = p[c];
        p[c] = orig + step;
        let up = loss(&p);
        p[c] = orig - step;
        let down = loss(&p);
        p[c] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[c];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-7);
        worst = worst.max(err);
    }
    worst
}

/// Half squared error `0.5 |f(x) - t|^2`.
pub fn half_sq_loss<M: Differentiable>(m: &M, params: &[f64], x: &[f64], t: &[f64]) -> f64 {
    m.forward(params, x)
        .iter()
        .zip(t)
        .map(|(y, t)| 0.5 * (y - t) * (y - t))
        .sum()
}

pub fn half_sq_grad<M: Differentiable>(m: &M, params: &[f64], x: &[f64], t: &[f64]) -> Vec<f64> {
    let y = m.forward(params, x);
    let dy: Vec<f64> = y.iter().zip(t).map(|(y, t)| y - t).collect();
    let mut g = vec![0.0; m.n_params()];
    m.backward(params, x, &dy, &mut g);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn coords(n: usize, k: usize, rng: &mut SeededRng) -> Vec<usize> {
        (0..k).map(|_| rng.index(n)).collect()
    }

    #[test]
    fn mlp_gradients_match_differences() {
        let mut rng = SeededRng::new(11, 0);
        for (hidden, out) in [
            (Activation::Tanh, Activation::Identity),
            (Activation::Silu, Activation::Softplus),
            (Activation::Silu, Activation::Tanh),
        ] {
            let mlp = Mlp::new(MlpSpec::uniform(vec![4, 7, 5, 2], hidden, out)).unwrap();
            let p = mlp.init_params(&mut rng);
            let x = rng.normal_vec(4);
            let t = rng.normal_vec(2);
            let cs = coords(mlp.n_params(), 120, &mut rng);
            let err = gradient_check(
                &p,
                &cs,
                1e-5,
                |q| half_sq_loss(&mlp, q, &x, &t),
                |q| half_sq_grad(&mlp, q, &x, &t),
            );
            assert!(err <= 1e-4, "{err}");
        }
    }

    #[test]
    fn kan_gradients_match_differences() {
        let mut rng = SeededRng::new(12, 0);
        let mut spec = KanSpec::new(vec![3, 4, 2]);
        spec.grid_size = 5;
        let kan = Kan::new(spec, None).unwrap();
        let mut p = kan.init_params(&mut rng);
        for v in p.iter_mut() {
            *v += 0.3 * rng.normal();
        }
        let x: Vec<f64> = (0..3).map(|_| rng.uniform_open(-0.9, 0.9)).collect();
        let t = rng.normal_vec(2);
        let cs = coords(kan.n_params(), 150, &mut rng);
        let err = gradient_check(
            &p,
            &cs,
            1e-5,
            |q| half_sq_loss(&kan, q, &x, &t),
            |q| half_sq_grad(&kan, q, &x, &t),
        );
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn input_gradients_match_differences() {
        let mut rng = SeededRng::new(13, 0);
        let kan = Kan::new(KanSpec::new(vec![2, 3, 1]), None).unwrap();
        let p = kan.init_params(&mut rng);
        let x = [0.17, -0.42];
        let mut g = vec![0.0; kan.n_params()];
        let dx = kan.backward(&p, &x, &[1.0], &mut g);
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let num = (kan.forward(&p, &xp)[0] - kan.forward(&p, &xm)[0]) / 2e-6;
            assert!((num - dx[i]).abs() < 1e-6);
        }
    }
}
