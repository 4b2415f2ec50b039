use crate::error::Result;
use crate::quantizer::{chunk_pool, quantize_int8, similarity_int8, QembDtype, Span};
use crate::retrieval::{recall_at_k, Index, Query, RunFile};

use super::corpus::{ContextDoc, RetrievalSet};
use super::encoder::ToyEncoder;

/// Mean Recall@k of exact search over `set` with embeddings quantized to
/// `dtype`.
pub fn retrieval_recall(encoder: &ToyEncoder, set: &RetrievalSet, dtype: QembDtype, k: usize) -> Result<f64> {
    let raws = set
        .docs
        .iter()
        .map(|(_, d)| encoder.embed(d))
        .collect::<Result<Vec<_>>>()?;
    let ids = set.docs.iter().map(|(id, _)| id.clone()).collect();
    let index = Index::build(ids, &raws, dtype, None)?;
    let mut run = RunFile::new();
    for (qid, q) in &set.queries {
        let query = Query::from_raw(&encoder.embed(q)?, dtype)?;
        run.insert(qid.clone(), index.search_topk(&query, k)?)?;
    }
    recall_at_k(&run, &set.qrels, k)
}

/// Fraction of chunk queries whose gold chunk scores strictly highest among
/// the chunks of its own document (INT8 cosine, late-chunked embeddings).
pub fn gold_chunk_accuracy(encoder: &ToyEncoder, docs: &[ContextDoc]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for doc in docs {
        let mut spans = Vec::with_capacity(doc.chunks.len());
        let mut start = 0;
        for c in &doc.chunks {
            spans.push(Span::new(start, start + c.len()));
            start += c.len();
        }
        let tokens = encoder.encode(&doc.chunks.concat())?.with_spans(spans)?;
        let chunks = chunk_pool(&tokens)?
            .iter()
            .map(quantize_int8)
            .collect::<Result<Vec<_>>>()?;
        for q in &doc.queries {
            let qv = quantize_int8(&encoder.embed(&q.query)?)?;
            let sims = chunks
                .iter()
                .map(|c| similarity_int8(&qv, c))
                .collect::<Result<Vec<_>>>()?;
            let gold = sims[q.gold];
            if sims.iter().enumerate().all(|(k, &s)| k == q.gold || s < gold) {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
