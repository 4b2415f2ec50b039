//! Ranking metrics over [`RunFile`] / [`Qrels`] pairs.
//!
//! Queries without any positive judgment are skipped; a judged query that is
//! missing from the run scores zero.

use crate::error::{Error, Result};

use super::{Qrels, RunFile};

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff k must be at least 1".into()));
    }
    Ok(())
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// Mean nDCG@k with gain `2^grade - 1` and discount `log2(rank + 1)`.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<f64> {
    check_k(k)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (qid, judged) in qrels.iter() {
        let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
        if ideal.is_empty() {
            continue;
        }
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(r, &g)| gain(g) / (r as f64 + 2.0).log2())
            .sum();
        let dcg: f64 = run.get(qid).map_or(0.0, |docs| {
            docs.iter()
                .take(k)
                .enumerate()
                .map(|(r, d)| judged.get(&d.id).map_or(0.0, |&g| gain(g) / (r as f64 + 2.0).log2()))
                .sum()
        });
        total += dcg / idcg;
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoScoreableQueries);
    }
    Ok(total / count as f64)
}

/// Mean over queries of `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<f64> {
    check_k(k)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (qid, judged) in qrels.iter() {
        let relevant = judged.values().filter(|&&g| g > 0).count();
        if relevant == 0 {
            continue;
        }
        let found = run.get(qid).map_or(0, |docs| {
            docs.iter()
                .take(k)
                .filter(|d| judged.get(&d.id).is_some_and(|&g| g > 0))
                .count()
        });
        total += found as f64 / relevant as f64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoScoreableQueries);
    }
    Ok(total / count as f64)
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Fraction of answers containing at least one of their labels
/// (case-insensitive, whitespace-normalized substring match).
pub fn match_metric<S: AsRef<str>>(items: &[(S, Vec<S>)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let hits = items
        .iter()
        .filter(|(answer, labels)| {
            let answer = normalize(answer.as_ref());
            labels.iter().any(|l| {
                let l = normalize(l.as_ref());
                !l.is_empty() && answer.contains(&l)
            })
        })
        .count();
    hits as f64 / items.len() as f64
}

#[cfg(test)]
mod tests {
    use super::super::ScoredDoc;
    use super::*;

    fn run(q: &str, docs: &[&str]) -> RunFile {
        let mut r = RunFile::new();
        let n = docs.len() as f64;
        r.insert(
            q,
            docs.iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc::new(*d, n - i as f64))
                .collect(),
        )
        .unwrap();
        r
    }

    fn qrels(q: &str, rel: &[(&str, u32)]) -> Qrels {
        let mut out = Qrels::new();
        for (d, g) in rel {
            out.insert(q, *d, *g);
        }
        out
    }

    #[test]
    fn ndcg_cases() {
        let qr = qrels("q", &[("a", 1), ("b", 1)]);
        assert_eq!(ndcg_at_k(&run("q", &["a", "b", "c"]), &qr, 10).unwrap(), 1.0);
        let single = qrels("q", &[("x", 1)]);
        let r = run("q", &["a", "b", "x", "c"]);
        assert!((ndcg_at_k(&r, &single, 10).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&r, &single, 2).unwrap(), 0.0);
    }

    #[test]
    fn graded_gain() {
        // ideal: grade 2 then grade 1; run puts grade 1 first
        let qr = qrels("q", &[("a", 2), ("b", 1)]);
        let got = ndcg_at_k(&run("q", &["b", "a"]), &qr, 10).unwrap();
        let dcg = 1.0 + 3.0 / 3f64.log2();
        let idcg = 3.0 + 1.0 / 3f64.log2();
        assert!((got - dcg / idcg).abs() < 1e-15);
    }

    #[test]
    fn recall_cases() {
        let qr = qrels("q", &[("a", 1), ("b", 1)]);
        assert_eq!(recall_at_k(&run("q", &["a", "b"]), &qr, 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&run("q", &["a", "c"]), &qr, 10).unwrap(), 0.5);
        assert_eq!(recall_at_k(&run("other", &["a"]), &qr, 10).unwrap(), 0.0);
    }

    #[test]
    fn unjudged_queries_are_skipped() {
        let qr = qrels("q", &[("a", 0)]);
        assert!(matches!(
            recall_at_k(&run("q", &["a"]), &qr, 5),
            Err(Error::NoScoreableQueries)
        ));
        assert!(matches!(
            ndcg_at_k(&run("q", &["a"]), &qr, 5),
            Err(Error::NoScoreableQueries)
        ));
        assert!(ndcg_at_k(&run("q", &["a"]), &qr, 0).is_err());
    }

    #[test]
    fn match_cases() {
        assert_eq!(match_metric(&[("Paris is the capital", vec!["Paris"])]), 1.0);
        assert_eq!(match_metric(&[("", vec!["Paris"])]), 0.0);
        let batch = [
            ("The answer is  42", vec!["42"]),
            ("NEW   york city", vec!["new york"]),
            ("unknown", vec!["berlin", "bonn"]),
            ("it was Bonn", vec!["berlin", "bonn"]),
        ];
        assert_eq!(match_metric(&batch), 0.75);
    }
}
