use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

use super::{RunFile, ScoredDoc};

/// Conventional RRF smoothing constant.
pub const DEFAULT_RRF_K: f64 = 60.0;

/// Reciprocal rank fusion: `score(doc) = sum over runs of 1 / (k + rank)`,
/// ranks starting at 1; a run that does not retrieve the doc contributes 0.
pub fn rrf_fuse(runs: &[RunFile], k_rrf: f64) -> Result<RunFile> {
    if !(k_rrf > 0.0 && k_rrf.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "RRF constant must be positive, got {k_rrf}"
        )));
    }
    let qids: BTreeSet<&str> = runs.iter().flat_map(|r| r.iter().map(|(q, _)| q)).collect();
    let mut out = RunFile::new();
    for qid in qids {
        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        // iterate ranks then runs so each doc's sum follows a fixed order
        let lists: Vec<&[ScoredDoc]> = runs.iter().filter_map(|r| r.get(qid)).collect();
        let mut contributions: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for list in &lists {
            for (rank, d) in list.iter().enumerate() {
                contributions.entry(d.id.as_str()).or_default().push(rank + 1);
            }
        }
        for (doc, mut ranks) in contributions {
            ranks.sort_unstable();
            scores.insert(doc, ranks.iter().map(|&r| 1.0 / (k_rrf + r as f64)).sum());
        }
        out.insert(qid, scores.into_iter().map(|(d, s)| ScoredDoc::new(d, s)).collect())?;
    }
    Ok(out)
}
