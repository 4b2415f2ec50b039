//! Pooling of token vectors and INT8 / binary quantization of the pooled
//! embedding.
//!
//! The INT8 map is `floor(127 * tanh(x) + 1/2)` applied entrywise to the
//! mean-pooled vector. Its backward rule treats the rounding as identity and
//! differentiates `127 * tanh` exactly (straight-through estimator). Binary
//! embeddings are the sign of the pooled vector with `sign(0) = +1`.

mod format;
mod pool;

pub use format::{read_qemb, write_qemb, EmbeddingFile, QembDtype, QEMB_MAGIC, QEMB_VERSION};
pub use pool::{chunk_pool, encode_windowed, mean_pool, ChunkWindows, Span, TokenMatrix};

use crate::error::{Error, Result};

/// Scale applied to `tanh` before rounding.
pub const INT8_SCALE: f64 = 127.0;

/// Pre-quantization embedding: the mean of the token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbedding(Vec<f64>);

impl RawEmbedding {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Leading `dim` entries.
    pub fn prefix(&self, dim: usize) -> Result<RawEmbedding> {
        if dim == 0 || dim > self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: dim,
            });
        }
        Ok(Self(self.0[..dim].to_vec()))
    }
}

/// INT8 embedding with entries in `-127..=127`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedEmbedding(Vec<i8>);

impl QuantizedEmbedding {
    /// Wraps `values`; `-128` is rejected since the quantizer never emits it.
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySequence);
        }
        if values.contains(&i8::MIN) {
            return Err(Error::InvalidArgument("int8 entry -128 is out of range".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }
}

/// Sign embedding stored bit-packed, bit set for `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryEmbedding {
    words: Vec<u64>,
    dim: usize,
}

impl BinaryEmbedding {
    /// Builds from explicit signs; any entry other than `-1` / `+1` is rejected.
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        if signs.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut words = vec![0u64; signs.len().div_ceil(64)];
        for (j, &s) in signs.iter().enumerate() {
            match s {
                1 => words[j / 64] |= 1 << (j % 64),
                -1 => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "binary entry {j} is {s}, expected -1 or +1"
                    )))
                }
            }
        }
        Ok(Self {
            words,
            dim: signs.len(),
        })
    }

    /// Builds from LSB-first packed bytes as stored in QEMB files.
    pub fn from_packed_bytes(bytes: &[u8], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptySequence);
        }
        if bytes.len() != dim.div_ceil(8) {
            return Err(Error::Shape(format!(
                "{} packed bytes for dimension {dim}",
                bytes.len()
            )));
        }
        let mut words = vec![0u64; dim.div_ceil(64)];
        for (b, &byte) in bytes.iter().enumerate() {
            words[b / 8] |= u64::from(byte) << (8 * (b % 8));
        }
        // padding bits beyond dim are ignored
        if !dim.is_multiple_of(64) {
            let last = words.len() - 1;
            words[last] &= (1u64 << (dim % 64)) - 1;
        }
        Ok(Self { words, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, j: usize) -> i8 {
        if self.words[j / 64] >> (j % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn signs(&self) -> Vec<i8> {
        (0..self.dim).map(|j| self.get(j)).collect()
    }

    /// LSB-first packed bytes, `ceil(dim / 8)` of them.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        (0..self.dim.div_ceil(8))
            .map(|b| (self.words[b / 8] >> (8 * (b % 8))) as u8)
            .collect()
    }

    /// Number of positions where the signs differ.
    pub fn hamming(&self, other: &BinaryEmbedding) -> Result<u32> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum())
    }
}

fn check_finite(raw: &RawEmbedding) -> Result<()> {
    match raw.values().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Scalar INT8 map `floor(127 tanh(x) + 0.5)`.
#[inline]
pub fn quantize_scalar(x: f64) -> i8 {
    // tanh is bounded by 1 so the result lies in -127..=127
    (INT8_SCALE * x.tanh() + 0.5).floor() as i8
}

/// Derivative of `127 tanh(x)`, the straight-through factor.
#[inline]
pub fn ste_factor(x: f64) -> f64 {
    let t = x.tanh();
    INT8_SCALE * (1.0 - t * t)
}

pub fn quantize_int8(raw: &RawEmbedding) -> Result<QuantizedEmbedding> {
    check_finite(raw)?;
    Ok(QuantizedEmbedding(
        raw.values().iter().map(|&x| quantize_scalar(x)).collect(),
    ))
}

pub fn quantize_binary(raw: &RawEmbedding) -> Result<BinaryEmbedding> {
    check_finite(raw)?;
    let signs: Vec<i8> = raw.values().iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect();
    BinaryEmbedding::from_signs(&signs)
}

/// Post-hoc binarization of an INT8 embedding (`0` maps to `+1`).
pub fn binarize_int8(q: &QuantizedEmbedding) -> BinaryEmbedding {
    let signs: Vec<i8> = q.values().iter().map(|&v| if v >= 0 { 1 } else { -1 }).collect();
    BinaryEmbedding::from_signs(&signs).expect("non-empty by construction")
}

/// Straight-through backward pass of [`quantize_int8`]: scales `upstream` by
/// the derivative of `127 tanh(raw)`.
pub fn ste_backward(raw: &RawEmbedding, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != raw.dim() {
        return Err(Error::DimensionMismatch {
            expected: raw.dim(),
            got: upstream.len(),
        });
    }
    Ok(raw
        .values()
        .iter()
        .zip(upstream)
        .map(|(&x, &g)| g * ste_factor(x))
        .collect())
}

/// Cosine of two INT8 embeddings. Dot product and squared norms are exact
/// 64-bit integers; the only rounding is in the final division.
pub fn similarity_int8(a: &QuantizedEmbedding, b: &QuantizedEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (dot, na, nb) = int8_dot_norms(a.values(), b.values());
    int8_cosine(dot, na, nb)
}

/// Exact dot product and squared norms of two equal-length INT8 slices.
#[inline]
pub(crate) fn int8_dot_norms(a: &[i8], b: &[i8]) -> (i64, i64, i64) {
    let (mut dot, mut na, mut nb) = (0i64, 0i64, 0i64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (i64::from(x), i64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na, nb)
}

#[inline]
pub(crate) fn int8_cosine(dot: i64, na: i64, nb: i64) -> Result<f64> {
    if na == 0 || nb == 0 {
        return Err(Error::UndefinedCosine);
    }
    // sqrt(fl(n^2)) == n for integer n, so self-similarity is exactly 1
    let denom = ((na as u128 * nb as u128) as f64).sqrt();
    Ok((dot as f64 / denom).clamp(-1.0, 1.0))
}

/// Cosine of two sign vectors, `(d - 2 * hamming) / d`.
pub fn similarity_binary(a: &BinaryEmbedding, b: &BinaryEmbedding) -> Result<f64> {
    let h = i64::from(a.hamming(b)?);
    let d = a.dim() as i64;
    Ok((d - 2 * h) as f64 / d as f64)
}
