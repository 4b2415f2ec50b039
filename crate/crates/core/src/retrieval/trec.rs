//! TREC run (`qid Q0 doc rank score tag`) and qrels (`qid doc rel`, or the
//! four-column `qid 0 doc rel`) text files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Qrels, RunFile, ScoredDoc};

pub fn format_run(run: &RunFile, tag: &str) -> String {
    let mut out = String::new();
    for (qid, docs) in run.iter() {
        for (rank, d) in docs.iter().enumerate() {
            writeln!(out, "{qid} Q0 {} {} {} {tag}", d.id, rank + 1, d.score).unwrap();
        }
    }
    out
}

pub fn parse_run(text: &str, path: &Path) -> Result<RunFile> {
    let mut grouped: std::collections::BTreeMap<String, Vec<ScoredDoc>> = Default::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        cols[3]
            .parse::<usize>()
            .map_err(|_| Error::parse(path, lineno, format!("bad rank {:?}", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::parse(path, lineno, format!("bad score {:?}", cols[4])))?;
        let docs = grouped.entry(cols[0].to_string()).or_default();
        if docs.iter().any(|d| d.id == cols[2]) {
            return Err(Error::parse(
                path,
                lineno,
                format!("document {} repeated for query {}", cols[2], cols[0]),
            ));
        }
        docs.push(ScoredDoc::new(cols[2], score));
    }
    let mut run = RunFile::new();
    for (q, docs) in grouped {
        run.insert(q, docs)?;
    }
    Ok(run)
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (qid, docs) in qrels.iter() {
        for (doc, grade) in docs {
            writeln!(out, "{qid} {doc} {grade}").unwrap();
        }
    }
    out
}

pub fn parse_qrels(text: &str, path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        let (q, d, g) = match cols.as_slice() {
            [] => continue,
            [q, d, g] | [q, _, d, g] => (q, d, g),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 3 or 4 columns, found {}", cols.len()),
                ))
            }
        };
        let grade: u32 = g
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad relevance grade {g:?}")))?;
        qrels.insert(*q, *d, grade);
    }
    Ok(qrels)
}

pub fn write_run(path: &Path, run: &RunFile, tag: &str) -> Result<()> {
    std::fs::write(path, format_run(run, tag)).map_err(|e| Error::io(path, e))
}

pub fn read_run(path: &Path) -> Result<RunFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&text, path)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    std::fs::write(path, format_qrels(qrels)).map_err(|e| Error::io(path, e))
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_roundtrip() {
        let mut run = RunFile::new();
        run.insert("q1", vec![ScoredDoc::new("b", 0.25), ScoredDoc::new("a", 0.75)])
            .unwrap();
        run.insert("q2", vec![ScoredDoc::new("c", -0.5)]).unwrap();
        let text = format_run(&run, "t");
        assert!(text.starts_with("q1 Q0 a 1 0.75 t\n"));
        assert_eq!(parse_run(&text, Path::new("r")).unwrap(), run);
    }

    #[test]
    fn qrels_formats() {
        let p = Path::new("qrels.txt");
        let three = parse_qrels("q1 d1 1\nq1 d2 0\n\nq2 d9 2\n", p).unwrap();
        let four = parse_qrels("q1 0 d1 1\nq1 0 d2 0\nq2 0 d9 2\n", p).unwrap();
        assert_eq!(three, four);
        assert_eq!(three.judgments(), 3);
        assert_eq!(parse_qrels(&format_qrels(&three), p).unwrap(), three);
    }

    #[test]
    fn errors_name_file_and_line() {
        let err = parse_qrels("q1 d1 1\nq1 d2 x\n", Path::new("judg.txt"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("judg.txt") && err.contains('2'), "{err}");
        let err = parse_run("q Q0 d 1 nan t\n", Path::new("run.trec")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(parse_run("q Q0 d 1\n", Path::new("r")).is_err());
    }
}
