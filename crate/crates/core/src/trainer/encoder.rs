use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::merge::{ParamVector, TensorSpec};
use crate::quantizer::{mean_pool, RawEmbedding, TokenMatrix};

/// Bag-of-tokens encoder: each token vector is its embedding-table row
/// multiplied by a shared projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    vocab: usize,
    d_in: usize,
    d: usize,
    /// `vocab x d_in` followed by `d_in x d`, both row-major.
    params: Vec<f64>,
}

impl ToyEncoder {
    pub fn zeros(vocab: usize, d_in: usize, d: usize) -> Result<Self> {
        if vocab == 0 || d_in == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder sizes must be positive (vocab {vocab}, d_in {d_in}, d {d})"
            )));
        }
        Ok(Self {
            vocab,
            d_in,
            d,
            params: vec![0.0; vocab * d_in + d_in * d],
        })
    }

    /// Uniform table entries in [-1, 1] and projection entries scaled by
    /// `sqrt(3 / d_in)`.
    pub fn random(vocab: usize, d_in: usize, d: usize, seed: u64) -> Result<Self> {
        let mut enc = Self::zeros(vocab, d_in, d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = vocab * d_in;
        let scale = (3.0 / d_in as f64).sqrt();
        for (i, p) in enc.params.iter_mut().enumerate() {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            *p = if i < split { u } else { u * scale };
        }
        Ok(enc)
    }

    pub fn from_params(vocab: usize, d_in: usize, d: usize, params: &ParamVector) -> Result<Self> {
        let mut enc = Self::zeros(vocab, d_in, d)?;
        if params.layout() != enc.layout().as_slice() {
            return Err(Error::Shape(format!(
                "checkpoint layout {:?} does not match encoder {vocab}x{d_in}x{d}",
                params.layout()
            )));
        }
        enc.params.copy_from_slice(params.values());
        Ok(enc)
    }

    /// Reads sizes from a checkpoint layout of `table [vocab, d_in]` and
    /// `proj [d_in, d]`.
    pub fn from_checkpoint(params: &ParamVector) -> Result<Self> {
        match params.layout() {
            [t, p] if t.shape.len() == 2 && p.shape.len() == 2 => {
                Self::from_params(t.shape[0], t.shape[1], p.shape[1], params)
            }
            other => Err(Error::Shape(format!("not an encoder checkpoint layout: {other:?}"))),
        }
    }

    pub fn layout(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::new("table", vec![self.vocab, self.d_in]),
            TensorSpec::new("proj", vec![self.d_in, self.d]),
        ]
    }

    pub fn to_params(&self) -> ParamVector {
        ParamVector::new(self.params.clone(), self.layout()).expect("encoder parameters are finite")
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn table_row(&self, id: u32) -> &[f64] {
        let s = id as usize * self.d_in;
        &self.params[s..s + self.d_in]
    }

    fn proj(&self) -> &[f64] {
        &self.params[self.vocab * self.d_in..]
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.vocab) {
            return Err(Error::OutOfVocab { id, vocab: self.vocab });
        }
        Ok(())
    }

    fn project(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (a, &xa) in x.iter().enumerate() {
            let row = &self.proj()[a * self.d..(a + 1) * self.d];
            for (o, &p) in out.iter_mut().zip(row) {
                *o += xa * p;
            }
        }
    }

    /// Token vectors, one row per id.
    pub fn encode(&self, ids: &[u32]) -> Result<TokenMatrix> {
        self.check_ids(ids)?;
        let mut data = vec![0.0; ids.len() * self.d];
        for (row, &id) in data.chunks_exact_mut(self.d).zip(ids) {
            self.project(self.table_row(id), row);
        }
        TokenMatrix::new(data, self.d)
    }

    /// Mean-pooled sequence embedding.
    pub fn embed(&self, ids: &[u32]) -> Result<RawEmbedding> {
        mean_pool(&self.encode(ids)?)
    }

    /// Adds the parameter gradient of a mean-pooled embedding of `ids`, given
    /// the upstream gradient `g` with respect to that embedding, into `grad`.
    pub fn backprop_mean(&self, ids: &[u32], g: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_ids(ids)?;
        if g.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: g.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let inv = 1.0 / ids.len() as f64;
        let mut u = vec![0.0; self.d_in];
        for &id in ids {
            for (ua, &t) in u.iter_mut().zip(self.table_row(id)) {
                *ua += t * inv;
            }
        }
        let split = self.vocab * self.d_in;
        let (g_table, g_proj) = grad.split_at_mut(split);
        // pooled = u P, so dP += u^T g and du = P g
        let mut du = vec![0.0; self.d_in];
        for a in 0..self.d_in {
            let prow = &self.proj()[a * self.d..(a + 1) * self.d];
            let grow = &mut g_proj[a * self.d..(a + 1) * self.d];
            let mut acc = 0.0;
            for b in 0..self.d {
                grow[b] += u[a] * g[b];
                acc += prow[b] * g[b];
            }
            du[a] = acc * inv;
        }
        for &id in ids {
            let s = id as usize * self.d_in;
            for (t, &v) in g_table[s..s + self.d_in].iter_mut().zip(&du) {
                *t += v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_projection_gives_zero_tokens() {
        let mut enc = ToyEncoder::random(10, 3, 2, 1).unwrap();
        let split = 30;
        enc.flat_mut()[split..].fill(0.0);
        let m = enc.encode(&[1, 4, 9]).unwrap();
        assert!((0..3).all(|l| m.row(l).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn identity_projection_returns_table_rows() {
        let mut enc = ToyEncoder::random(5, 3, 3, 2).unwrap();
        let split = 15;
        for a in 0..3 {
            for b in 0..3 {
                enc.flat_mut()[split + a * 3 + b] = if a == b { 1.0 } else { 0.0 };
            }
        }
        let m = enc.encode(&[4, 0]).unwrap();
        assert_eq!(m.row(0), &enc.flat()[12..15]);
        assert_eq!(m.row(1), &enc.flat()[0..3]);
    }

    #[test]
    fn seeded_and_checked() {
        let a = ToyEncoder::random(20, 4, 4, 5).unwrap();
        assert_eq!(a, ToyEncoder::random(20, 4, 4, 5).unwrap());
        assert_eq!(a.encode(&[3, 7]).unwrap(), a.encode(&[3, 7]).unwrap());
        assert!(matches!(a.encode(&[20]), Err(Error::OutOfVocab { id: 20, vocab: 20 })));
        assert!(matches!(a.encode(&[]), Err(Error::EmptySequence)));
        let back = ToyEncoder::from_checkpoint(&a.to_params()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let enc = ToyEncoder::random(6, 3, 2, 9).unwrap();
        let ids = [1u32, 4, 1, 5];
        let g = [0.7, -1.3];
        let mut grad = vec![0.0; enc.flat().len()];
        enc.backprop_mean(&ids, &g, &mut grad).unwrap();
        let f = |e: &ToyEncoder| {
            let p = e.embed(&ids).unwrap();
            p.values().iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..grad.len() {
            let mut plus = enc.clone();
            plus.flat_mut()[i] += h;
            let mut minus = enc.clone();
            minus.flat_mut()[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
