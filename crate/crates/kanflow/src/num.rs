//! Decimal float text with 17 significant digits.

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use kanflow_core::Tensor;

use crate::error::{CliError, Result};

/// Formats with 17 significant digits; parsing the text recovers the bits.
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn parse_finite(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value {s:?}"));
    }
    Ok(v)
}

/// An `f64` stored as a 17-digit decimal string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&fmt(self.0))
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_finite(&s).map(Num).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Num>,
}

impl From<&Tensor> for MatrixDoc {
    fn from(t: &Tensor) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            values: t.as_slice().iter().map(|&v| Num(v)).collect(),
        }
    }
}

impl MatrixDoc {
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.rows, self.cols, self.values.iter().map(|n| n.0).collect())
            .map_err(|e| CliError::input(format!("malformed matrix: {e}")))
    }
}
