//! Contrastive losses with analytic gradients.
//!
//! Every loss is an InfoNCE row per query, averaged over the `N` queries:
//! `-log(exp(s_pos / tau) / sum_t w_t exp(s_t / tau))`, where the sum always
//! contains the positive and `w_t` are 0/1 masks held constant in the
//! backward pass. Similarities are cosines, optionally between INT8-quantized
//! embeddings; gradients are reported with respect to the raw (pre-quantization)
//! embeddings using the straight-through rule.

mod context;
mod kernel;
mod mask;
mod matryoshka;
mod pair;
mod schedule;
mod triplet;

pub use context::{batch_loss, context_loss, local_loss, seq_loss};
pub use mask::{doc_hash, dup_mask, false_negative_mask, MaskMatrix};
pub use matryoshka::{matryoshka_wrap, LossKind};
pub use pair::{global_loss, pair_loss};
pub use schedule::beta_schedule;
pub use triplet::triplet_loss;

use crate::error::{Error, Result};
use crate::quantizer::RawEmbedding;

/// Default false-negative margin.
pub const DEFAULT_MARGIN: f64 = 0.1;
/// Pair and contextual stage temperature.
pub const PAIR_TEMPERATURE: f64 = 0.02;
/// Triplet stage temperature.
pub const TRIPLET_TEMPERATURE: f64 = 0.03;
/// Weight of the in-sequence term in the local loss.
pub const DEFAULT_ALPHA: f64 = 0.2;
/// Mined hard negatives per query in triplet training.
pub const DEFAULT_HARD_NEGATIVES: usize = 3;
/// Matryoshka prefix sizes of the large model.
pub const MATRYOSHKA_DIMS: [usize; 6] = [128, 256, 512, 1024, 2048, 2560];

/// How embeddings are mapped before the cosine is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    /// Cosine of the raw embeddings.
    #[default]
    None,
    /// `floor(127 tanh(x) + 1/2)` forward, straight-through backward.
    Int8,
    /// `127 tanh(x)` without rounding; the smooth surrogate of `Int8`.
    Int8Smooth,
}

/// Chunk embeddings of one document and the index of its gold chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct DocChunks {
    pub chunks: Vec<RawEmbedding>,
    pub gold: usize,
}

/// Inputs to the contrastive losses. Query `i` is paired with document `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub queries: Vec<RawEmbedding>,
    pub docs: Vec<RawEmbedding>,
    pub hard_negatives: Option<Vec<Vec<RawEmbedding>>>,
    pub chunks: Option<Vec<DocChunks>>,
    pub doc_hashes: Option<Vec<u64>>,
    pub temperature: f64,
    pub margin: f64,
}

impl ContrastiveBatch {
    pub fn new(queries: Vec<RawEmbedding>, docs: Vec<RawEmbedding>, temperature: f64) -> Self {
        Self {
            queries,
            docs,
            hard_negatives: None,
            chunks: None,
            doc_hashes: None,
            temperature,
            margin: DEFAULT_MARGIN,
        }
    }

    pub fn with_hard_negatives(mut self, negatives: Vec<Vec<RawEmbedding>>) -> Self {
        self.hard_negatives = Some(negatives);
        self
    }

    pub fn with_chunks(mut self, chunks: Vec<DocChunks>) -> Self {
        self.chunks = Some(chunks);
        self
    }

    pub fn with_doc_hashes(mut self, hashes: Vec<u64>) -> Self {
        self.doc_hashes = Some(hashes);
        self
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.queries.first().map_or(0, RawEmbedding::dim)
    }

    /// Checks the structural invariants shared by every loss.
    pub fn validate(&self) -> Result<()> {
        let n = self.queries.len();
        if n == 0 {
            return Err(Error::InvalidArgument("batch has no queries".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.margin.is_finite() {
            return Err(Error::InvalidArgument("margin must be finite".into()));
        }
        if self.docs.len() != n {
            return Err(Error::Shape(format!("{n} queries but {} documents", self.docs.len())));
        }
        let d = self.dim();
        let check = |e: &RawEmbedding| -> Result<()> {
            if e.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: e.dim(),
                });
            }
            Ok(())
        };
        self.queries.iter().chain(&self.docs).try_for_each(check)?;
        if let Some(neg) = &self.hard_negatives {
            if neg.len() != n {
                return Err(Error::Shape(format!(
                    "{n} queries but {} hard-negative lists",
                    neg.len()
                )));
            }
            let k = neg[0].len();
            if let Some(bad) = neg.iter().position(|l| l.len() != k) {
                return Err(Error::Shape(format!(
                    "query {bad} has {} hard negatives, query 0 has {k}",
                    neg[bad].len()
                )));
            }
            neg.iter().flatten().try_for_each(check)?;
        }
        if let Some(chunks) = &self.chunks {
            if chunks.len() != n {
                return Err(Error::Shape(format!(
                    "{n} queries but {} chunked documents",
                    chunks.len()
                )));
            }
            for (i, c) in chunks.iter().enumerate() {
                if c.chunks.is_empty() {
                    return Err(Error::Shape(format!("document {i} has no chunks")));
                }
                if c.gold >= c.chunks.len() {
                    return Err(Error::Shape(format!(
                        "document {i}: gold index {} out of {} chunks",
                        c.gold,
                        c.chunks.len()
                    )));
                }
                c.chunks.iter().try_for_each(check)?;
            }
        }
        if let Some(h) = &self.doc_hashes {
            if h.len() != n {
                return Err(Error::Shape(format!("{n} queries but {} document hashes", h.len())));
            }
        }
        Ok(())
    }

    /// Copy with every embedding cut to its first `dim` entries.
    pub fn truncated(&self, dim: usize) -> Result<ContrastiveBatch> {
        let cut = |v: &[RawEmbedding]| v.iter().map(|e| e.prefix(dim)).collect::<Result<Vec<_>>>();
        Ok(ContrastiveBatch {
            queries: cut(&self.queries)?,
            docs: cut(&self.docs)?,
            hard_negatives: self
                .hard_negatives
                .as_ref()
                .map(|n| n.iter().map(|l| cut(l)).collect::<Result<Vec<_>>>())
                .transpose()?,
            chunks: self
                .chunks
                .as_ref()
                .map(|c| {
                    c.iter()
                        .map(|dc| {
                            Ok(DocChunks {
                                chunks: cut(&dc.chunks)?,
                                gold: dc.gold,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?,
            doc_hashes: self.doc_hashes.clone(),
            temperature: self.temperature,
            margin: self.margin,
        })
    }
}

/// Loss value and gradients with respect to the raw embeddings. Gradient
/// buffers mirror the batch shapes; absent components give empty buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_queries: Vec<Vec<f64>>,
    pub grad_docs: Vec<Vec<f64>>,
    pub grad_negatives: Vec<Vec<Vec<f64>>>,
    pub grad_chunks: Vec<Vec<Vec<f64>>>,
}

impl LossResult {
    /// All-zero result shaped like `batch`.
    pub fn zeros_like(batch: &ContrastiveBatch) -> Self {
        let z = |v: &[RawEmbedding]| v.iter().map(|e| vec![0.0; e.dim()]).collect::<Vec<_>>();
        LossResult {
            value: 0.0,
            grad_queries: z(&batch.queries),
            grad_docs: z(&batch.docs),
            grad_negatives: batch
                .hard_negatives
                .as_ref()
                .map_or_else(Vec::new, |n| n.iter().map(|l| z(l)).collect()),
            grad_chunks: batch
                .chunks
                .as_ref()
                .map_or_else(Vec::new, |c| c.iter().map(|dc| z(&dc.chunks)).collect()),
        }
    }

    /// `self += weight * other`, value and gradients alike. Empty buffers in
    /// `self` adopt the shape of `other`.
    pub fn add_scaled(&mut self, other: &LossResult, weight: f64) {
        fn axpy(dst: &mut Vec<Vec<f64>>, src: &[Vec<f64>], w: f64) {
            if dst.is_empty() {
                *dst = src.iter().map(|r| vec![0.0; r.len()]).collect();
            }
            for (d, s) in dst.iter_mut().zip(src) {
                for (a, b) in d.iter_mut().zip(s) {
                    *a += w * b;
                }
            }
        }
        self.value += weight * other.value;
        axpy(&mut self.grad_queries, &other.grad_queries, weight);
        axpy(&mut self.grad_docs, &other.grad_docs, weight);
        if self.grad_negatives.is_empty() {
            self.grad_negatives = vec![Vec::new(); other.grad_negatives.len()];
        }
        for (d, s) in self.grad_negatives.iter_mut().zip(&other.grad_negatives) {
            axpy(d, s, weight);
        }
        if self.grad_chunks.is_empty() {
            self.grad_chunks = vec![Vec::new(); other.grad_chunks.len()];
        }
        for (d, s) in self.grad_chunks.iter_mut().zip(&other.grad_chunks) {
            axpy(d, s, weight);
        }
    }

    /// Largest absolute gradient entry.
    pub fn max_abs_grad(&self) -> f64 {
        self.grad_queries
            .iter()
            .chain(&self.grad_docs)
            .chain(self.grad_negatives.iter().flatten())
            .chain(self.grad_chunks.iter().flatten())
            .flatten()
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Affine combination `w * a + (1 - w) * b` of two loss results.
pub(crate) fn mix(a: LossResult, b: &LossResult, w: f64) -> LossResult {
    let mut out = a;
    out.value *= w;
    for v in out
        .grad_queries
        .iter_mut()
        .chain(out.grad_docs.iter_mut())
        .chain(out.grad_negatives.iter_mut().flatten())
        .chain(out.grad_chunks.iter_mut().flatten())
    {
        v.iter_mut().for_each(|g| *g *= w);
    }
    out.add_scaled(b, 1.0 - w);
    out
}

pub(crate) fn check_unit_interval(name: &str, w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {w}")));
    }
    Ok(())
}
