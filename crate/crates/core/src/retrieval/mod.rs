//! Exact quantized retrieval and its evaluation.

mod fusion;
mod index;
mod metrics;
mod storage;
mod trec;

pub use fusion::{rrf_fuse, DEFAULT_RRF_K};
pub use index::{Index, IndexNoise, Query};
pub use metrics::{match_metric, ndcg_at_k, recall_at_k};
pub use storage::{storage_efficiency, StorageDtype};
pub use trec::{format_qrels, format_run, parse_qrels, parse_run, read_qrels, read_run, write_qrels, write_run};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(id: impl Into<String>, score: f64) -> Self {
        Self { id: id.into(), score }
    }
}

/// Descending score, ties by ascending id.
pub(crate) fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Ranked results per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    queries: BTreeMap<String, Vec<ScoredDoc>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a ranking for `qid`, sorting it by descending score (ties by
    /// doc id). Duplicate documents are rejected.
    pub fn insert(&mut self, qid: impl Into<String>, mut docs: Vec<ScoredDoc>) -> Result<()> {
        let qid = qid.into();
        if let Some(bad) = docs.iter().find(|d| !d.score.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "query {qid}: non-finite score for {}",
                bad.id
            )));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = docs.iter().find(|d| !seen.insert(d.id.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "query {qid}: document {} ranked twice",
                dup.id
            )));
        }
        docs.sort_by(rank_order);
        self.queries.insert(qid, docs);
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&[ScoredDoc]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.queries.iter().map(|(q, d)| (q.as_str(), d.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Graded relevance judgments per query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    queries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc: impl Into<String>, grade: u32) {
        self.queries.entry(qid.into()).or_default().insert(doc.into(), grade);
    }

    pub fn get(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.queries.get(qid)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.queries.iter().map(|(q, d)| (q.as_str(), d))
    }

    /// Number of (query, document) judgments.
    pub fn judgments(&self) -> usize {
        self.queries.values().map(BTreeMap::len).sum()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}
