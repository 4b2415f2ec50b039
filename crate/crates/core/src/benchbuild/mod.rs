//! Query-to-query and query-to-document benchmark construction.

mod q2d;
mod stratify;

pub use q2d::label_q2d;
pub use stratify::{stratified_sample, Dimension, Form, Intent, LengthClass, QueryMeta, Quotas};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::retrieval::Qrels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub query: String,
    pub url: String,
    pub timestamp: i64,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub pii: bool,
}

/// Lowercased host plus path, without scheme, query string, fragment or
/// trailing slash.
pub fn normalize_url(url: &str) -> String {
    let url = url.trim();
    let rest = match url.find("://") {
        Some(i) => &url[i + 3..],
        None => url,
    };
    let rest = rest.split(['?', '#']).next().unwrap_or_default();
    let (host, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    format!("{}{}", host.to_lowercase(), path.trim_end_matches('/'))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryCluster {
    pub url_key: String,
    /// Distinct query strings, earliest first.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextItem {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Q2qBenchmark {
    pub clusters: Vec<QueryCluster>,
    pub queries: Vec<TextItem>,
    pub docs: Vec<TextItem>,
    pub qrels: Qrels,
}

/// Groups queries by destination url; the earliest query of each cluster is
/// the evaluation query and the others become its relevant pseudo documents.
pub fn build_q2q(logs: &[LogRecord]) -> Q2qBenchmark {
    let mut by_url: BTreeMap<String, Vec<&LogRecord>> = BTreeMap::new();
    for r in logs.iter().filter(|r| !r.pii) {
        let key = normalize_url(&r.url);
        if key.is_empty() {
            continue;
        }
        by_url.entry(key).or_default().push(r);
    }
    let mut out = Q2qBenchmark::default();
    for (url_key, mut recs) in by_url {
        recs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.query.cmp(&b.query)));
        let mut seen = BTreeSet::new();
        let members: Vec<String> = recs
            .iter()
            .filter(|r| seen.insert(r.query.as_str()))
            .map(|r| r.query.clone())
            .collect();
        if members.len() < 2 {
            continue;
        }
        let qid = format!("q{}", out.queries.len());
        out.queries.push(TextItem {
            id: qid.clone(),
            text: members[0].clone(),
        });
        for text in &members[1..] {
            let did = format!("d{}", out.docs.len());
            out.qrels.insert(qid.clone(), did.clone(), 1);
            out.docs.push(TextItem {
                id: did,
                text: text.clone(),
            });
        }
        out.clusters.push(QueryCluster { url_key, members });
    }
    out
}
