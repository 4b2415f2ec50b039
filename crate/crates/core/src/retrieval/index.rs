use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quantizer::{
    int8_cosine, int8_dot_norms, quantize_binary, quantize_int8, BinaryEmbedding, EmbeddingFile, QembDtype,
    QuantizedEmbedding, RawEmbedding,
};

use super::{rank_order, ScoredDoc};

/// Seeded uniform jitter added to raw vectors before quantization so that
/// duplicate documents do not tie exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexNoise {
    pub seed: u64,
    pub scale: f64,
}

/// Query vector matching an index dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Int8(QuantizedEmbedding),
    Binary(BinaryEmbedding),
}

impl Query {
    pub fn from_raw(raw: &RawEmbedding, dtype: QembDtype) -> Result<Self> {
        Ok(match dtype {
            QembDtype::Int8 => Query::Int8(quantize_int8(raw)?),
            QembDtype::Binary => Query::Binary(quantize_binary(raw)?),
        })
    }

    fn dtype(&self) -> QembDtype {
        match self {
            Query::Int8(_) => QembDtype::Int8,
            Query::Binary(_) => QembDtype::Binary,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Query::Int8(q) => q.dim(),
            Query::Binary(b) => b.dim(),
        }
    }
}

#[derive(Debug, Clone)]
enum Rows {
    /// `count * dim` entries plus each row's squared norm.
    Int8 { data: Vec<i8>, norms: Vec<i64> },
    /// `count * words` 64-bit words.
    Binary { data: Vec<u64>, words: usize },
}

/// Immutable exact-search index over quantized vectors.
#[derive(Debug, Clone)]
pub struct Index {
    dim: usize,
    ids: Vec<String>,
    rows: Rows,
}

fn check_ids(ids: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate document id {dup:?}")));
    }
    Ok(())
}

impl Index {
    pub fn from_int8(ids: Vec<String>, rows: &[QuantizedEmbedding]) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Shape(format!("{} ids for {} vectors", ids.len(), rows.len())));
        }
        check_ids(&ids)?;
        let dim = rows.first().ok_or(Error::EmptyIndex)?.dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut norms = Vec::with_capacity(rows.len());
        for (r, id) in rows.iter().zip(&ids) {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.dim(),
                });
            }
            if r.is_zero() {
                return Err(Error::InvalidArgument(format!(
                    "document {id:?} quantizes to the zero vector"
                )));
            }
            norms.push(r.values().iter().map(|&v| i64::from(v) * i64::from(v)).sum());
            data.extend_from_slice(r.values());
        }
        Ok(Self {
            dim,
            ids,
            rows: Rows::Int8 { data, norms },
        })
    }

    pub fn from_binary(ids: Vec<String>, rows: &[BinaryEmbedding]) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Shape(format!("{} ids for {} vectors", ids.len(), rows.len())));
        }
        check_ids(&ids)?;
        let dim = rows.first().ok_or(Error::EmptyIndex)?.dim();
        let words = dim.div_ceil(64);
        let mut data = Vec::with_capacity(rows.len() * words);
        for r in rows {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.dim(),
                });
            }
            data.extend_from_slice(r.words());
        }
        Ok(Self {
            dim,
            ids,
            rows: Rows::Binary { data, words },
        })
    }

    /// Quantizes raw document vectors into a new index.
    pub fn build(ids: Vec<String>, raws: &[RawEmbedding], dtype: QembDtype, noise: Option<IndexNoise>) -> Result<Self> {
        let jittered: Vec<RawEmbedding>;
        let raws = match noise {
            Some(n) => {
                let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
                jittered = raws
                    .iter()
                    .map(|r| {
                        RawEmbedding::new(
                            r.values()
                                .iter()
                                .map(|&x| x + rng.gen_range(-n.scale..=n.scale))
                                .collect(),
                        )
                    })
                    .collect::<Result<_>>()?;
                &jittered
            }
            None => raws,
        };
        match dtype {
            QembDtype::Int8 => {
                let rows = raws.iter().map(quantize_int8).collect::<Result<Vec<_>>>()?;
                Self::from_int8(ids, &rows)
            }
            QembDtype::Binary => {
                let rows = raws.iter().map(quantize_binary).collect::<Result<Vec<_>>>()?;
                Self::from_binary(ids, &rows)
            }
        }
    }

    /// Index over a decoded QEMB file; ids default to row numbers.
    pub fn from_file(file: &EmbeddingFile, ids: Option<Vec<String>>) -> Result<Self> {
        let ids = ids.unwrap_or_else(|| (0..file.len()).map(|i| i.to_string()).collect());
        match file {
            EmbeddingFile::Int8 { rows, .. } => Self::from_int8(ids, rows),
            EmbeddingFile::Binary { rows, .. } => Self::from_binary(ids, rows),
        }
    }

    pub fn to_file(&self) -> EmbeddingFile {
        match &self.rows {
            Rows::Int8 { data, .. } => EmbeddingFile::Int8 {
                dim: self.dim,
                rows: data
                    .chunks_exact(self.dim)
                    .map(|c| QuantizedEmbedding::new(c.to_vec()).expect("validated at build"))
                    .collect(),
            },
            Rows::Binary { data, words } => EmbeddingFile::Binary {
                dim: self.dim,
                rows: data
                    .chunks_exact(*words)
                    .map(|w| {
                        let bytes: Vec<u8> = w
                            .iter()
                            .flat_map(|x| x.to_le_bytes())
                            .take(self.dim.div_ceil(8))
                            .collect();
                        BinaryEmbedding::from_packed_bytes(&bytes, self.dim).expect("validated at build")
                    })
                    .collect(),
            },
        }
    }

    pub fn dtype(&self) -> QembDtype {
        match self.rows {
            Rows::Int8 { .. } => QembDtype::Int8,
            Rows::Binary { .. } => QembDtype::Binary,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Similarity of the query to every row, in row order.
    pub fn scores(&self, query: &Query) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.dtype() != self.dtype() {
            return Err(Error::InvalidArgument(format!(
                "query dtype {:?} does not match index dtype {:?}",
                query.dtype(),
                self.dtype()
            )));
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        match (&self.rows, query) {
            (Rows::Int8 { data, norms }, Query::Int8(q)) => data
                .chunks_exact(self.dim)
                .zip(norms)
                .map(|(row, &nr)| {
                    let (dot, nq, _) = int8_dot_norms(q.values(), row);
                    int8_cosine(dot, nq, nr)
                })
                .collect(),
            (Rows::Binary { data, words }, Query::Binary(q)) => {
                let d = self.dim as i64;
                Ok(data
                    .chunks_exact(*words)
                    .map(|row| {
                        let h: i64 = row
                            .iter()
                            .zip(q.words())
                            .map(|(a, b)| i64::from((a ^ b).count_ones()))
                            .sum();
                        (d - 2 * h) as f64 / d as f64
                    })
                    .collect())
            }
            _ => unreachable!("dtype checked above"),
        }
    }

    /// Exact top-`k` by cosine, ties broken by ascending document id.
    pub fn search_topk(&self, query: &Query, k: usize) -> Result<Vec<ScoredDoc>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut hits: Vec<ScoredDoc> = self
            .scores(query)?
            .into_iter()
            .zip(&self.ids)
            .map(|(s, id)| ScoredDoc::new(id.clone(), s))
            .collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(hits)
    }
}
