//! Seeded synthetic corpus for the toy curriculum.
//!
//! The vocabulary starts with `fillers` content-free tokens, followed by
//! `concepts` tokens of language A and their translations in language B
//! (`b = a + concepts`). A relevant document contains all concepts of its
//! query. Contextual documents share a topic across chunks and differ only
//! in detail tokens from the lower half of the filler range; a chunk query
//! names those details through their aliases in the upper half
//! (`alias = detail + fillers / 2`), a relation only contextual training sees.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::Qrels;

use super::data::{ChunkQuery, Dataset, DatasetPool, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub vocab: usize,
    pub fillers: usize,
    pub query_concepts: usize,
    pub extra_concepts: usize,
    pub doc_fillers: usize,
    /// Training pairs over all pair datasets.
    pub pairs: usize,
    /// Shares of `pairs` going to the cross-lingual and language-B
    /// datasets; the rest are language-A pairs.
    pub xling_share: f64,
    pub multi_share: f64,
    pub triplets: usize,
    pub hard_negatives: usize,
    pub context_docs: usize,
    pub chunks: usize,
    pub topic_concepts: usize,
    pub chunk_details: usize,
    pub queries_per_doc: usize,
    pub validation_queries: usize,
    pub test_queries: usize,
    pub distractors: usize,
    pub context_test_docs: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            vocab: 200,
            fillers: 24,
            query_concepts: 5,
            extra_concepts: 1,
            doc_fillers: 4,
            pairs: 2000,
            xling_share: 0.4,
            multi_share: 0.2,
            triplets: 1000,
            hard_negatives: 3,
            context_docs: 400,
            chunks: 4,
            topic_concepts: 2,
            chunk_details: 2,
            queries_per_doc: 2,
            validation_queries: 100,
            test_queries: 200,
            distractors: 500,
            context_test_docs: 200,
        }
    }
}

impl CorpusConfig {
    pub fn concepts(&self) -> usize {
        (self.vocab - self.fillers) / 2
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("corpus: {m}")));
        if self.fillers >= self.vocab || self.concepts() < self.query_concepts + self.extra_concepts + 2 {
            return bad("vocabulary too small for the requested concepts");
        }
        if self.query_concepts < 2 || self.doc_fillers > self.fillers {
            return bad("need at least two query concepts and doc_fillers <= fillers");
        }
        if self.chunks * self.chunk_details > self.fillers / 2 || self.chunks < 2 {
            return bad("chunks x chunk_details must fit in half the filler range, with at least two chunks");
        }
        if self.queries_per_doc == 0 || self.queries_per_doc > self.chunks {
            return bad("queries_per_doc must be in 1..=chunks");
        }
        if !(0.0..1.0).contains(&self.xling_share)
            || !(0.0..1.0).contains(&self.multi_share)
            || self.xling_share + self.multi_share >= 1.0
        {
            return bad("pair shares must leave room for language-A pairs");
        }
        if self.pairs < 4 || self.triplets == 0 || self.hard_negatives == 0 || self.context_docs == 0 {
            return bad("training sets must be non-empty");
        }
        if self.test_queries == 0 || self.validation_queries == 0 || self.context_test_docs == 0 {
            return bad("evaluation sets must be non-empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lang {
    A,
    B,
}

/// Queries and a document collection with their relevance judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSet {
    pub queries: Vec<(String, Vec<u32>)>,
    pub docs: Vec<(String, Vec<u32>)>,
    pub qrels: Qrels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDoc {
    pub chunks: Vec<Vec<u32>>,
    pub queries: Vec<ChunkQuery>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: CorpusConfig,
    /// `en` (A to A), `xling` (B to A) and `multi` (B to B) pairs.
    pub pairs: DatasetPool,
    pub contextual: DatasetPool,
    pub triplets: DatasetPool,
    pub validation: RetrievalSet,
    pub test: RetrievalSet,
    pub context_test: Vec<ContextDoc>,
}

struct Gen<'a> {
    cfg: &'a CorpusConfig,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn token(&self, concept: usize, lang: Lang) -> u32 {
        let base = self.cfg.fillers + if lang == Lang::B { self.cfg.concepts() } else { 0 };
        (base + concept) as u32
    }

    fn concepts_avoiding(&mut self, n: usize, avoid: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let c = self.rng.gen_range(0..self.cfg.concepts());
            if !avoid.contains(&c) && !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    fn fillers(&mut self, n: usize) -> Vec<u32> {
        index::sample(&mut self.rng, self.cfg.fillers, n)
            .into_iter()
            .map(|i| i as u32)
            .collect()
    }

    fn words(&self, concepts: &[usize], lang: Lang) -> Vec<u32> {
        concepts.iter().map(|&c| self.token(c, lang)).collect()
    }

    /// `concepts` plus random extra concepts and fillers, shuffled.
    fn doc(&mut self, concepts: &[usize], extra: usize, lang: Lang) -> Vec<u32> {
        let more = self.concepts_avoiding(extra, concepts);
        let mut toks = self.words(concepts, lang);
        toks.extend(self.words(&more, lang));
        toks.extend(self.fillers(self.cfg.doc_fillers));
        toks.shuffle(&mut self.rng);
        toks
    }

    fn topic(&mut self, used: &mut BTreeSet<Vec<usize>>) -> Vec<usize> {
        loop {
            let mut t = self.concepts_avoiding(self.cfg.query_concepts, &[]);
            t.sort_unstable();
            if used.insert(t.clone()) {
                return t;
            }
        }
    }

    fn pair(
        &mut self,
        q_lang: Lang,
        d_lang: Lang,
        used: &mut BTreeSet<Vec<usize>>,
    ) -> (Vec<u32>, Vec<u32>, Vec<usize>) {
        let topic = self.topic(used);
        let query = self.words(&topic, q_lang);
        let doc = self.doc(&topic, self.cfg.extra_concepts, d_lang);
        (query, doc, topic)
    }

    fn context_doc(&mut self) -> ContextDoc {
        let cfg = self.cfg;
        let topic = self.concepts_avoiding(cfg.topic_concepts, &[]);
        let half = (cfg.fillers / 2) as u32;
        let details: Vec<u32> = index::sample(&mut self.rng, cfg.fillers / 2, cfg.chunks * cfg.chunk_details)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        let chunks: Vec<Vec<u32>> = details
            .chunks(cfg.chunk_details)
            .map(|d| {
                let mut c = self.words(&topic, Lang::A);
                c.extend_from_slice(d);
                c.shuffle(&mut self.rng);
                c
            })
            .collect();
        let golds = index::sample(&mut self.rng, cfg.chunks, cfg.queries_per_doc).into_vec();
        let queries = golds
            .into_iter()
            .map(|gold| {
                let mut q = self.words(&topic, Lang::A);
                q.extend(
                    details[gold * cfg.chunk_details..(gold + 1) * cfg.chunk_details]
                        .iter()
                        .map(|d| d + half),
                );
                q.shuffle(&mut self.rng);
                ChunkQuery { query: q, gold }
            })
            .collect();
        ContextDoc { chunks, queries }
    }

    fn eval_set(
        &mut self,
        name: &str,
        n: usize,
        used: &mut BTreeSet<Vec<usize>>,
        distractors: &[Vec<u32>],
    ) -> RetrievalSet {
        let mut set = RetrievalSet {
            queries: Vec::new(),
            docs: Vec::new(),
            qrels: Qrels::new(),
        };
        for i in 0..n {
            // alternate monolingual and cross-lingual queries over language-A documents
            let q_lang = if i % 2 == 0 { Lang::A } else { Lang::B };
            let (q, d, _) = self.pair(q_lang, Lang::A, used);
            let qid = format!("{name}-q{i}");
            let did = format!("{name}-d{i}");
            set.qrels.insert(qid.clone(), did.clone(), 1);
            set.queries.push((qid, q));
            set.docs.push((did, d));
        }
        set.docs.extend(
            distractors
                .iter()
                .enumerate()
                .map(|(i, d)| (format!("x{i}"), d.clone())),
        );
        set
    }
}

impl SyntheticCorpus {
    pub fn build(cfg: &CorpusConfig) -> Result<Self> {
        cfg.validate()?;
        let mut g = Gen {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        let mut used = BTreeSet::new();

        let n_x = ((cfg.pairs as f64 * cfg.xling_share).round() as usize).max(1);
        let n_multi = ((cfg.pairs as f64 * cfg.multi_share).round() as usize).max(1);
        let n_en = cfg.pairs - n_x - n_multi;
        let mut make = |n: usize, ql: Lang, dl: Lang, g: &mut Gen| -> Vec<Record> {
            (0..n)
                .map(|_| {
                    let (query, doc, _) = g.pair(ql, dl, &mut used);
                    Record::Pair { query, doc }
                })
                .collect()
        };
        let en = make(n_en, Lang::A, Lang::A, &mut g);
        let xling = make(n_x, Lang::B, Lang::A, &mut g);
        let multi = make(n_multi, Lang::B, Lang::B, &mut g);
        let pairs = DatasetPool::new(vec![
            Dataset::new("en", en),
            Dataset::new("xling", xling),
            Dataset::new("multi", multi),
        ])?;

        let half = cfg.query_concepts / 2;
        let triplets = (0..cfg.triplets)
            .map(|i| {
                let lang = if i % 2 == 0 { Lang::A } else { Lang::B };
                let (query, positive, topic) = g.pair(lang, Lang::A, &mut used);
                // hard negatives share half of the query's concepts
                let negatives = (0..cfg.hard_negatives)
                    .map(|_| {
                        let mut keep = topic.clone();
                        keep.shuffle(&mut g.rng);
                        keep.truncate(half);
                        let more = g.concepts_avoiding(cfg.query_concepts - half + cfg.extra_concepts, &topic);
                        keep.extend(more);
                        g.doc(&keep, 0, Lang::A)
                    })
                    .collect();
                Record::Triplet {
                    query,
                    positive,
                    negatives,
                }
            })
            .collect();
        let triplets = DatasetPool::new(vec![Dataset::new("triplet", triplets)])?;

        let contextual = (0..cfg.context_docs)
            .map(|_| {
                let d = g.context_doc();
                Record::Context {
                    chunks: d.chunks,
                    queries: d.queries,
                }
            })
            .collect();
        let contextual = DatasetPool::new(vec![Dataset::new("contextual", contextual)])?;

        let distractors: Vec<Vec<u32>> = (0..cfg.distractors)
            .map(|_| {
                let c = g.concepts_avoiding(cfg.query_concepts, &[]);
                g.doc(&c, cfg.extra_concepts, Lang::A)
            })
            .collect();
        let validation = g.eval_set("val", cfg.validation_queries, &mut used, &distractors);
        let test = g.eval_set("test", cfg.test_queries, &mut used, &distractors);
        let context_test = (0..cfg.context_test_docs).map(|_| g.context_doc()).collect();

        Ok(Self {
            config: cfg.clone(),
            pairs,
            contextual,
            triplets,
            validation,
            test,
            context_test,
        })
    }

    /// Number of training pairs across all pair datasets.
    pub fn pair_count(&self) -> usize {
        self.pairs.datasets().iter().map(Dataset::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let cfg = CorpusConfig::default();
        let a = SyntheticCorpus::build(&cfg).unwrap();
        assert_eq!(a.pair_count(), 2000);
        assert_eq!(a.test.queries.len(), 200);
        assert_eq!(a.test.docs.len(), 700);
        assert_eq!(a.test.qrels.judgments(), 200);
        let b = SyntheticCorpus::build(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tokens_in_vocab_and_relevant_docs_contain_concepts() {
        let c = SyntheticCorpus::build(&CorpusConfig::default()).unwrap();
        let v = c.config.vocab as u32;
        let concepts = c.config.concepts() as u32;
        let fillers = c.config.fillers as u32;
        let to_a = |t: u32| if t >= fillers + concepts { t - concepts } else { t };
        for (qid, q) in &c.test.queries {
            let (did, _) = c.test.qrels.get(qid).unwrap().iter().next().unwrap();
            let doc = &c.test.docs.iter().find(|(d, _)| d == did).unwrap().1;
            assert!(q.iter().all(|&t| t < v && doc.contains(&to_a(t))));
        }
        let half = fillers / 2;
        for d in &c.context_test {
            for q in &d.queries {
                let gold = &d.chunks[q.gold];
                let unalias = |t: u32| if (half..fillers).contains(&t) { t - half } else { t };
                assert!(q.query.iter().all(|&t| gold.contains(&unalias(t))));
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = CorpusConfig {
            vocab: 10,
            ..CorpusConfig::default()
        };
        assert!(SyntheticCorpus::build(&cfg).is_err());
    }
}
