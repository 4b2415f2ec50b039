//! Spherical linear interpolation of flattened model parameters.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, QCKP_MAGIC, QCKP_VERSION,
};

use crate::error::{Error, Result};

/// Below this `sin(omega)` the operands are treated as collinear and
/// interpolated linearly.
pub const COLLINEAR_EPS: f64 = 1e-7;

/// Named tensor shape inside a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flattened parameters with their tensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<TensorSpec>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<TensorSpec>) -> Result<Self> {
        let total: usize = layout.iter().map(TensorSpec::numel).sum();
        if total != values.len() {
            return Err(Error::Shape(format!(
                "layout describes {total} elements but {} values were given",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values, layout })
    }

    /// Single unnamed tensor.
    pub fn flat(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![TensorSpec::new("params", vec![n])])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Element ranges of each tensor in layout order.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.layout
            .iter()
            .map(|t| {
                let r = start..start + t.numel();
                start = r.end;
                r
            })
            .collect()
    }
}

/// Whether one angle covers the whole model or each tensor gets its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeGranularity {
    #[default]
    Global,
    PerTensor,
}

/// SLERP of two raw vectors; see [`slerp`].
pub fn slerp_slice(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "interpolation weight {t} outside [0, 1]"
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument(
            "cannot interpolate a zero-norm parameter vector".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    let sin = omega.sin();
    let (wa, wb) = if sin < COLLINEAR_EPS {
        (1.0 - t, t)
    } else {
        (((1.0 - t) * omega).sin() / sin, (t * omega).sin() / sin)
    };
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}

/// `sin((1-t)Ω)/sin Ω · a + sin(tΩ)/sin Ω · b` with `Ω` the angle between
/// `a` and `b`; linear interpolation when `sin Ω < 1e-7`.
pub fn slerp(a: &ParamVector, b: &ParamVector, t: f64) -> Result<ParamVector> {
    slerp_with(a, b, t, MergeGranularity::Global)
}

pub fn slerp_with(a: &ParamVector, b: &ParamVector, t: f64, granularity: MergeGranularity) -> Result<ParamVector> {
    if a.layout != b.layout {
        return Err(Error::Shape("parameter layouts differ".into()));
    }
    let values = match granularity {
        MergeGranularity::Global => slerp_slice(&a.values, &b.values, t)?,
        MergeGranularity::PerTensor => {
            let mut out = Vec::with_capacity(a.len());
            for r in a.ranges() {
                out.extend(slerp_slice(&a.values[r.clone()], &b.values[r], t)?);
            }
            out
        }
    };
    ParamVector::new(values, a.layout.clone())
}
