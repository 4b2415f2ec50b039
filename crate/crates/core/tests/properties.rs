use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quantret::benchbuild::{
    build_q2q, normalize_url, stratified_sample, Dimension, Form, Intent, LogRecord, QueryMeta, Quotas,
};
use quantret::diffusion::corrupt;
use quantret::losses::{beta_schedule, ContrastiveBatch, LossKind, Quantization};
use quantret::merge::{decode_checkpoint, encode_checkpoint, slerp_slice, ParamVector, TensorSpec};
use quantret::quantizer::QembDtype;
use quantret::quantizer::{
    quantize_binary, quantize_int8, quantize_scalar, BinaryEmbedding, EmbeddingFile, RawEmbedding,
};
use quantret::retrieval::{
    format_run, ndcg_at_k, parse_run, recall_at_k, rrf_fuse, Index, IndexNoise, Qrels, Query, RunFile, ScoredDoc,
};

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, dim)
}

fn nonzero_raw(dim: usize) -> impl Strategy<Value = RawEmbedding> {
    vector(dim)
        .prop_filter("needs a non-negligible entry", |v| v.iter().any(|x| x.abs() > 0.05))
        .prop_map(|v| RawEmbedding::new(v).unwrap())
}

fn ranking() -> impl Strategy<Value = Vec<ScoredDoc>> {
    prop::collection::btree_map("[a-h]", -5.0f64..5.0, 1..8)
        .prop_map(|m| m.into_iter().map(|(id, s)| ScoredDoc::new(id, s)).collect())
}

fn run_file() -> impl Strategy<Value = RunFile> {
    prop::collection::btree_map("q[0-3]", ranking(), 1..4).prop_map(|m| {
        let mut r = RunFile::new();
        for (q, docs) in m {
            r.insert(q, docs).unwrap();
        }
        r
    })
}

fn qrels() -> impl Strategy<Value = Qrels> {
    prop::collection::vec(("q[0-3]", "[a-h]", 1u32..4), 1..12).prop_map(|v| {
        let mut q = Qrels::new();
        for (qid, doc, g) in v {
            q.insert(qid, doc, g);
        }
        q
    })
}

proptest! {
    #[test]
    fn int8_is_monotone_and_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize_scalar(lo) <= quantize_scalar(hi));
        prop_assert!((-127..=127).contains(&quantize_scalar(a)));
    }

    #[test]
    fn int8_is_odd_away_from_half_steps(x in 0.01f64..10.0) {
        let q = 127.0 * x.tanh();
        prop_assume!((q - q.floor() - 0.5).abs() > 1e-9);
        prop_assert_eq!(quantize_scalar(-x), -quantize_scalar(x));
    }

    #[test]
    fn binary_packing_roundtrips(v in vector(1).prop_flat_map(|_| (1usize..200).prop_flat_map(vector))) {
        let b = quantize_binary(&RawEmbedding::new(v.clone()).unwrap()).unwrap();
        let back = BinaryEmbedding::from_packed_bytes(&b.to_packed_bytes(), v.len()).unwrap();
        prop_assert_eq!(&back, &b);
        prop_assert_eq!(b.hamming(&back).unwrap(), 0);
    }

    #[test]
    fn qemb_roundtrips(rows in (1usize..40).prop_flat_map(|d| prop::collection::vec(vector(d), 1..10)), binary in any::<bool>()) {
        let dim = rows[0].len();
        let raws: Vec<RawEmbedding> = rows.into_iter().map(|r| RawEmbedding::new(r).unwrap()).collect();
        let file = if binary {
            EmbeddingFile::Binary { dim, rows: raws.iter().map(|r| quantize_binary(r).unwrap()).collect() }
        } else {
            EmbeddingFile::Int8 { dim, rows: raws.iter().map(|r| quantize_int8(r).unwrap()).collect() }
        };
        let bytes = file.encode().unwrap();
        prop_assert_eq!(EmbeddingFile::decode(&bytes).unwrap(), file);
    }

    #[test]
    fn checkpoint_roundtrips(values in prop::collection::vec(-1e6f32..1e6, 6)) {
        // stored as f32
        let layout = vec![TensorSpec::new("w", vec![2, 2]), TensorSpec::new("b", vec![2])];
        let p = ParamVector::new(values.into_iter().map(f64::from).collect(), layout).unwrap();
        prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap(), p);
    }

    #[test]
    fn slerp_stays_on_sphere_and_is_symmetric(a in vector(6), b in vector(6), t in 0.0f64..=1.0) {
        let unit = |v: &[f64]| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect::<Vec<_>>()
        };
        prop_assume!(a.iter().any(|x| x.abs() > 0.1) && b.iter().any(|x| x.abs() > 0.1));
        let (a, b) = (unit(&a), unit(&b));
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        prop_assume!(cos > -0.999);
        let m = slerp_slice(&a, &b, t).unwrap();
        prop_assert!((m.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        let r = slerp_slice(&b, &a, 1.0 - t).unwrap();
        prop_assert!(m.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn rrf_ignores_run_order(a in run_file(), b in run_file(), c in run_file()) {
        let f1 = rrf_fuse(&[a.clone(), b.clone(), c.clone()], 60.0).unwrap();
        let f2 = rrf_fuse(&[c, a, b], 60.0).unwrap();
        prop_assert_eq!(f1, f2);
    }

    #[test]
    fn metrics_bounded_and_recall_monotone(run in run_file(), qrels in qrels()) {
        let mut prev = 0.0;
        for k in 1..10 {
            let n = ndcg_at_k(&run, &qrels, k).unwrap();
            let r = recall_at_k(&run, &qrels, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&n) && (0.0..=1.0).contains(&r));
            prop_assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn trec_run_roundtrips(run in run_file()) {
        let text = format_run(&run, "tag");
        prop_assert_eq!(parse_run(&text, Path::new("run")).unwrap(), run);
    }

    #[test]
    fn topk_is_prefix_of_full_ranking(
        docs in prop::collection::vec(nonzero_raw(12), 1..60),
        q in nonzero_raw(12),
        k in 1usize..80,
        binary in any::<bool>(),
        noise in prop::option::of((any::<u64>(), 0.0f64..0.1)),
    ) {
        let dtype = if binary { QembDtype::Binary } else { QembDtype::Int8 };
        let ids: Vec<String> = (0..docs.len()).map(|i| format!("d{i:03}")).collect();
        let noise = noise.map(|(seed, scale)| IndexNoise { seed, scale });
        let idx = Index::build(ids.clone(), &docs, dtype, noise).unwrap();
        let query = Query::from_raw(&q, dtype).unwrap();
        let scores = idx.scores(&query).unwrap();
        let mut full: Vec<(f64, &String)> = scores.iter().copied().zip(&ids).collect();
        full.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let top = idx.search_topk(&query, k).unwrap();
        prop_assert_eq!(top.len(), k.min(docs.len()));
        for (hit, (s, id)) in top.iter().zip(&full) {
            prop_assert_eq!(&hit.id, *id);
            prop_assert_eq!(hit.score, *s);
        }
    }

    #[test]
    fn losses_are_nonnegative_and_finite(
        rows in (2usize..8, 2usize..6).prop_flat_map(|(n, d)| (prop::collection::vec(nonzero_raw(d), n), prop::collection::vec(nonzero_raw(d), n))),
        tau in 0.01f64..1.0,
        int8 in any::<bool>(),
    ) {
        let (q, d) = rows;
        let quant = if int8 { Quantization::Int8 } else { Quantization::None };
        let b = ContrastiveBatch::new(q, d, tau);
        let r = LossKind::Pair.evaluate(&b, quant);
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        prop_assert!(r.value >= 0.0 && r.value.is_finite());
        prop_assert!(r.max_abs_grad().is_finite());
    }

    #[test]
    fn beta_stays_between_endpoints(step in 0usize..=500) {
        let b = beta_schedule(step, 500, 0.2, 0.5).unwrap();
        prop_assert!((0.2..=0.5).contains(&b));
        if step > 0 {
            prop_assert!(b >= beta_schedule(step - 1, 500, 0.2, 0.5).unwrap());
        }
    }

    #[test]
    fn corruption_only_touches_masked_positions(x0 in prop::collection::vec(0u32..50, 1..40), t in 0.001f64..=1.0, seed in any::<u64>()) {
        let c = corrupt(&x0, t, 99, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for ((&o, &m), &cv) in x0.iter().zip(c.mask_positions()).zip(c.corrupted()) {
            prop_assert_eq!(cv, if m { 99 } else { o });
        }
    }

    #[test]
    fn url_normalization_is_idempotent(host in "[A-Za-z]{1,8}\\.(com|org)", path in "(/[a-zA-Z0-9]{1,5}){0,3}/?", query in "(\\?[a-z]=[0-9])?") {
        let url = format!("https://{host}{path}{query}");
        let once = normalize_url(&url);
        prop_assert_eq!(normalize_url(&once), once.clone());
        prop_assert!(!once.contains('?') && !once.ends_with('/'));
    }

    #[test]
    fn q2q_queries_have_relevant_docs(raw in prop::collection::vec(("[a-d]{1,3}", 0usize..5, 0i64..100), 0..40)) {
        let logs: Vec<LogRecord> = raw
            .into_iter()
            .map(|(q, u, ts)| LogRecord { query: q, url: format!("site{u}.com"), timestamp: ts, language: "en".into(), pii: false })
            .collect();
        let b = build_q2q(&logs);
        prop_assert_eq!(b.queries.len(), b.qrels.len());
        let docs: usize = b.clusters.iter().map(|c| c.members.len() - 1).sum();
        prop_assert_eq!(b.docs.len(), docs);
        prop_assert_eq!(b.qrels.judgments(), docs);
    }

    #[test]
    fn stratified_sample_meets_quotas(langs in prop::collection::vec(0usize..3, 1..60), want in prop::collection::vec(0usize..10, 3), seed in any::<u64>()) {
        let names = ["en", "de", "ja"];
        let metas: Vec<QueryMeta> = langs.iter().map(|&l| QueryMeta::new("some query", Intent::Factual, Form::Keyword, names[l])).collect();
        let quotas = Quotas {
            by: vec![Dimension::Language],
            quotas: names.iter().zip(&want).map(|(n, &w)| (n.to_string(), w)).collect::<BTreeMap<_, _>>(),
            strict: false,
        };
        let picked = stratified_sample(&metas, &quotas, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        for (l, name) in names.iter().enumerate() {
            let have = langs.iter().filter(|&&x| x == l).count();
            let got = picked.iter().filter(|&&i| metas[i].language == *name).count();
            prop_assert_eq!(got, want[l].min(have));
        }
    }
}
