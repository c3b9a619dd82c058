//! Regressor model files: JSON with spec, scalers and parameter payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Differentiable, Kan, MinMaxScaler, Mlp, ParamVector, Standardizer};
use crate::error::{Error, Result};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regressor {
    Mlp(Mlp),
    Kan(Kan),
}

impl Regressor {
    pub fn name(&self) -> &'static str {
        match self {
            Regressor::Mlp(_) => "mlp",
            Regressor::Kan(_) => "kan",
        }
    }

    pub fn init_params(&self, rng: &mut crate::SeededRng) -> Vec<f64> {
        match self {
            Regressor::Mlp(m) => m.init_params(rng),
            Regressor::Kan(k) => k.init_params(rng),
        }
    }
}

impl Differentiable for Regressor {
    fn n_inputs(&self) -> usize {
        match self {
            Regressor::Mlp(m) => m.n_inputs(),
            Regressor::Kan(k) => k.n_inputs(),
        }
    }

    fn n_outputs(&self) -> usize {
        match self {
            Regressor::Mlp(m) => m.n_outputs(),
            Regressor::Kan(k) => k.n_outputs(),
        }
    }

    fn n_params(&self) -> usize {
        match self {
            Regressor::Mlp(m) => m.n_params(),
            Regressor::Kan(k) => k.n_params(),
        }
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        match self {
            Regressor::Mlp(m) => m.forward(params, x),
            Regressor::Kan(k) => k.forward(params, x),
        }
    }

    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        match self {
            Regressor::Mlp(m) => m.backward(params, x, dy, grad),
            Regressor::Kan(k) => k.backward(params, x, dy, grad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorFile {
    pub version: u32,
    pub model: Regressor,
    pub x_scaler: MinMaxScaler,
    pub y_scaler: Standardizer,
    pub params: ParamVector,
    #[serde(default)]
    pub env_hash: Option<String>,
}

impl RegressorFile {
    /// Prediction in raw target units.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.x_scaler.apply(x);
        self.y_scaler.invert(&self.model.forward(&self.params.values, &z))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_FILE_VERSION {
            return Err(Error::Format(format!(
                "model file version {} (expected {MODEL_FILE_VERSION})",
                self.version
            )));
        }
        self.params.validate()?;
        if self.params.len() != self.model.n_params() {
            return Err(Error::Format("parameter count does not match model spec".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        f.validate()?;
        Ok(f)
    }
}
