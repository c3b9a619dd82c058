//! Flat parameter vectors with a shape registry and a bit-exact JSON form
//! (base64 of little-endian f64).

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl ParamShape {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub shapes: Vec<ParamShape>,
}

impl ParamVector {
    /// Single unnamed block.
    pub fn flat(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            shapes: vec![ParamShape {
                name: "all".into(),
                dims: vec![n],
            }],
        }
    }

    pub fn with_shapes(values: Vec<f64>, shapes: Vec<ParamShape>) -> Result<Self> {
        let pv = Self { values, shapes };
        pv.validate()?;
        Ok(pv)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.shapes.iter().map(ParamShape::len).sum();
        if total != self.values.len() {
            return Err(Error::Format(format!(
                "shape registry covers {total} values, vector holds {}",
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite parameter at index {i}")));
        }
        Ok(())
    }

    /// Slice of the named block.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let mut off = 0;
        for s in &self.shapes {
            if s.name == name {
                return Some(&self.values[off..off + s.len()]);
            }
            off += s.len();
        }
        None
    }

    pub fn encode(values: &[f64]) -> String {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        STANDARD.encode(bytes)
    }

    pub fn decode(s: &str) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(s)
            .map_err(|e| Error::Format(format!("bad base64 parameter payload: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("parameter payload is not a multiple of 8 bytes".into()));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
struct Wire {
    encoding: String,
    shapes: Vec<ParamShape>,
    data: String,
}

impl Serialize for ParamVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Wire {
            encoding: "base64-f64le".into(),
            shapes: self.shapes.clone(),
            data: Self::encode(&self.values),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = Wire::deserialize(d)?;
        if w.encoding != "base64-f64le" {
            return Err(D::Error::custom(format!("unknown encoding {}", w.encoding)));
        }
        let values = Self::decode(&w.data).map_err(D::Error::custom)?;
        Self::with_shapes(values, w.shapes).map_err(D::Error::custom)
    }
}
