//! Minibatch regression with Adam.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::{Differentiable, Kan, MinMaxScaler, ParamVector, Regressor, RegressorFile, Standardizer};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Rows per parallel gradient chunk. Fixed so results do not depend on the
/// number of worker threads.
pub const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
    Nll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: Loss,
    pub test_fraction: f64,
    /// Learning rate at the last epoch as a fraction of `lr`; the rate decays
    /// linearly per epoch. 1 keeps it constant.
    pub lr_final_fraction: f64,
    /// Fraction of the training split held back to pick the best epoch.
    /// 0 keeps the final parameters.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 256,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: Loss::Mse,
            test_fraction: 0.2,
            lr_final_fraction: 1.0,
            val_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::Config("lr_final_fraction must lie in (0, 1]".into()));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 0.5)".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr * (1.0 - t * (1.0 - self.lr_final_fraction))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Shuffled train/test index split.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::new(seed, 0x5911).shuffle(&mut idx);
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Errors in standardized target units, averaged over output dimensions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub train_mae: f64,
    pub test_mae: f64,
    /// Mean signed residual (prediction minus target) on the test split.
    pub test_bias: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedRegressor {
    pub file: RegressorFile,
    pub report: RegressionReport,
    pub test_indices: Vec<usize>,
}

/// Sum of `0.5 |f(x) - t|^2` gradients over `rows`, computed in fixed chunks
/// and reduced in order.
pub fn batch_mse_grad<M: Differentiable + Sync>(
    model: &M,
    params: &[f64],
    xs: &[Vec<f64>],
    ts: &[Vec<f64>],
    rows: &[usize],
) -> (f64, Vec<f64>) {
    let partial: Vec<(f64, Vec<f64>)> = rows
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; model.n_params()];
            let mut loss = 0.0;
            for &r in chunk {
                let y = model.forward(params, &xs[r]);
                let dy: Vec<f64> = y.iter().zip(&ts[r]).map(|(a, b)| a - b).collect();
                loss += 0.5 * dy.iter().map(|d| d * d).sum::<f64>();
                model.backward(params, &xs[r], &dy, &mut g);
            }
            (loss, g)
        })
        .collect();
    let mut total = vec![0.0; model.n_params()];
    let mut loss = 0.0;
    for (l, g) in partial {
        loss += l;
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    (loss, total)
}

fn mae_bias<M: Differentiable + Sync>(
    model: &M,
    params: &[f64],
    xs: &[Vec<f64>],
    ts: &[Vec<f64>],
    rows: &[usize],
) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let per: Vec<(f64, f64)> = rows
        .par_iter()
        .map(|&r| {
            let y = model.forward(params, &xs[r]);
            let k = y.len() as f64;
            let abs: f64 = y.iter().zip(&ts[r]).map(|(a, b)| (a - b).abs()).sum::<f64>() / k;
            let signed: f64 = y.iter().zip(&ts[r]).map(|(a, b)| a - b).sum::<f64>() / k;
            (abs, signed)
        })
        .collect();
    let n = rows.len() as f64;
    (
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    )
}

/// Fits `model` to `(inputs, targets)`: min-max scaled inputs, standardized
/// targets, shuffled split, minibatch Adam on mean squared error.
///
/// Scalers are fitted on the training split only. A KAN's first-layer grid is
/// rebuilt from the scaled training inputs.
pub fn train_regressor(
    model: Regressor,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainedRegressor> {
    cfg.validate()?;
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: targets.len(),
            context: "regression targets",
        });
    }
    if inputs.len() < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    let (train, test) = split_indices(inputs.len(), cfg.test_fraction, cfg.seed);
    let train_x: Vec<Vec<f64>> = train.iter().map(|&i| inputs[i].clone()).collect();
    let train_t: Vec<Vec<f64>> = train.iter().map(|&i| targets[i].clone()).collect();
    let x_scaler = MinMaxScaler::fit(&train_x)?;
    let y_scaler = Standardizer::fit(&train_t)?;
    crate::error::check_dim(model.n_inputs(), x_scaler.dim(), "regressor inputs")?;
    crate::error::check_dim(model.n_outputs(), y_scaler.mean.len(), "regressor outputs")?;
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| x_scaler.apply(x)).collect();
    let ts: Vec<Vec<f64>> = targets.iter().map(|t| y_scaler.apply(t)).collect();
    let model = match model {
        Regressor::Kan(k) => {
            let sx: Vec<Vec<f64>> = train.iter().map(|&i| xs[i].clone()).collect();
            Regressor::Kan(Kan::new(k.spec, Some(&sx))?)
        }
        m => m,
    };

    let mut rng = SeededRng::new(cfg.seed, 0x7a1);
    let mut params = model.init_params(&mut rng);
    let mut opt = Adam::new(params.len(), cfg.adam());
    let n_val = (train.len() as f64 * cfg.val_fraction).round() as usize;
    let (fit_rows, val_rows) = train.split_at(train.len() - n_val);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut order = fit_rows.to_vec();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        opt.cfg.lr = cfg.lr_at(epoch);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grad) = batch_mse_grad(&model, &params, &xs, &ts, batch);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "{} regression loss became non-finite in epoch {epoch}",
                    model.name()
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut params, &grad);
        }
        if n_val > 0 {
            let (val_mae, _) = mae_bias(&model, &params, &xs, &ts, val_rows);
            if best.as_ref().is_none_or(|(b, _)| val_mae < *b) {
                best = Some((val_mae, params.clone()));
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    let (train_mae, _) = mae_bias(&model, &params, &xs, &ts, &train);
    let (test_mae, test_bias) = mae_bias(&model, &params, &xs, &ts, &test);
    let report = RegressionReport {
        train_mae,
        test_mae,
        test_bias,
        n_train: train.len(),
        n_test: test.len(),
        epochs: cfg.epochs,
    };
    let file = RegressorFile {
        version: super::MODEL_FILE_VERSION,
        params: ParamVector::flat(params),
        model,
        x_scaler,
        y_scaler,
        env_hash: None,
    };
    file.params.validate()?;
    Ok(TrainedRegressor {
        file,
        report,
        test_indices: test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, KanSpec, Mlp, MlpSpec};

    fn linear_data(n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = SeededRng::new(3, 0);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.uniform_open(-1.0, 1.0), rng.uniform_open(-1.0, 1.0)])
            .collect();
        let ts = xs.iter().map(|x| vec![x[0] + x[1]]).collect();
        (xs, ts)
    }

    fn mlp() -> Regressor {
        Regressor::Mlp(Mlp::new(MlpSpec::uniform(vec![2, 16, 1], Activation::Tanh, Activation::Identity)).unwrap())
    }

    #[test]
    fn constant_target_is_absorbed() {
        let (xs, _) = linear_data(300);
        let ts = vec![vec![4.2]; 300];
        let cfg = TrainConfig {
            lr: 1e-2,
            batch_size: 32,
            epochs: 200,
            lr_final_fraction: 1e-3,
            ..Default::default()
        };
        let out = train_regressor(mlp(), &xs, &ts, &cfg).unwrap();
        assert!(out.report.test_mae < 1e-3, "{:?}", out.report);
        assert!((out.file.predict(&[0.1, 0.2])[0] - 4.2).abs() < 1e-3);
    }

    #[test]
    fn linear_function_is_learned() {
        let (xs, ts) = linear_data(1000);
        let cfg = TrainConfig {
            lr: 1e-2,
            batch_size: 32,
            epochs: 150,
            ..Default::default()
        };
        let out = train_regressor(mlp(), &xs, &ts, &cfg).unwrap();
        // report is in standardized units; convert to raw units for the check
        let raw = out.report.test_mae * out.file.y_scaler.std[0];
        assert!(raw < 0.01, "{raw}");
    }

    #[test]
    fn kan_learns_and_is_deterministic() {
        let (xs, ts) = linear_data(400);
        let mut spec = KanSpec::new(vec![2, 3, 1]);
        spec.grid_size = 5;
        let cfg = TrainConfig {
            lr: 1e-2,
            batch_size: 32,
            epochs: 40,
            ..Default::default()
        };
        let kan = || Regressor::Kan(Kan::new(spec.clone(), None).unwrap());
        let a = train_regressor(kan(), &xs, &ts, &cfg).unwrap();
        let b = train_regressor(kan(), &xs, &ts, &cfg).unwrap();
        assert_eq!(a.file.params, b.file.params);
        assert!(a.report.test_mae < 0.05, "{:?}", a.report);
    }

    #[test]
    fn model_file_round_trip() {
        let (xs, ts) = linear_data(100);
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let out = train_regressor(mlp(), &xs, &ts, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        out.file.save(&p).unwrap();
        let back = RegressorFile::load(&p).unwrap();
        assert_eq!(back, out.file);
    }

    #[test]
    fn split_is_eighty_twenty() {
        let (tr, te) = split_indices(100, 0.2, 1);
        assert_eq!((tr.len(), te.len()), (80, 20));
        let mut all: Vec<_> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
