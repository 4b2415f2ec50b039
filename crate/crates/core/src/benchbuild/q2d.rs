use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::retrieval::{rrf_fuse, Qrels, RunFile};

/// Marks a pooled document relevant when its RRF score over `runs` reaches
/// `threshold`. Only relevant documents are stored.
pub fn label_q2d(pools: &BTreeMap<String, Vec<String>>, runs: &[RunFile], threshold: f64, k_rrf: f64) -> Result<Qrels> {
    if threshold.is_nan() {
        return Err(Error::InvalidArgument("threshold is NaN".into()));
    }
    let fused = rrf_fuse(runs, k_rrf)?;
    let mut qrels = Qrels::new();
    for (qid, pool) in pools {
        let scores: BTreeMap<&str, f64> = fused
            .get(qid)
            .unwrap_or_default()
            .iter()
            .map(|d| (d.id.as_str(), d.score))
            .collect();
        for doc in pool {
            let s = *scores.get(doc.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("pooled document {doc} for query {qid} appears in no run"))
            })?;
            if s >= threshold {
                qrels.insert(qid.clone(), doc.clone(), 1);
            }
        }
    }
    Ok(qrels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ScoredDoc;

    fn run(docs: &[&str]) -> RunFile {
        let mut r = RunFile::new();
        let n = docs.len() as f64;
        r.insert(
            "q",
            docs.iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc::new(*d, n - i as f64))
                .collect(),
        )
        .unwrap();
        r
    }

    fn pool(docs: &[&str]) -> BTreeMap<String, Vec<String>> {
        BTreeMap::from([("q".to_string(), docs.iter().map(|d| d.to_string()).collect())])
    }

    #[test]
    fn hand_thresholds() {
        let runs = [run(&["a", "x", "y", "z", "b"]), run(&["c", "a"])];
        let p = pool(&["a", "b", "c"]);
        let q = label_q2d(&p, &runs, 0.03, 60.0).unwrap();
        let rel = q.get("q").unwrap();
        assert!(rel.contains_key("a"));
        assert!(!rel.contains_key("b"));
        assert_eq!(label_q2d(&p, &runs, 0.0, 60.0).unwrap().judgments(), 3);
        assert!(label_q2d(&p, &runs, 1.0, 60.0).unwrap().is_empty());
    }

    #[test]
    fn errors() {
        let runs = [run(&["a"])];
        assert!(label_q2d(&pool(&["a"]), &runs, f64::NAN, 60.0).is_err());
        assert!(label_q2d(&pool(&["missing"]), &runs, 0.0, 60.0).is_err());
    }
}
