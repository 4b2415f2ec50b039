//! The `quantret` command line.
//!
//! Every subcommand prints one JSON summary line on stdout; logs and errors
//! go to stderr. `--config FILE` reads a TOML file whose `[<subcommand>]`
//! table supplies default flags (a top-level `seed` sets `--seed`); flags on
//! the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::benchbuild::{build_q2q, label_q2d, stratified_sample, Form, Intent, LogRecord, QueryMeta, Quotas};
use crate::diffusion::{corrupt, sample_timestep};
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::losses::{
    matryoshka_wrap, ContrastiveBatch, DocChunks, LossKind, Quantization, DEFAULT_ALPHA, DEFAULT_MARGIN,
};
use crate::merge::{read_checkpoint, slerp_with, write_checkpoint, MergeGranularity};
use crate::quantizer::{quantize_binary, quantize_int8, read_qemb, write_qemb, EmbeddingFile, QembDtype, RawEmbedding};
use crate::retrieval::{
    ndcg_at_k, read_qrels, read_run, recall_at_k, rrf_fuse, storage_efficiency, write_qrels, write_run, Index,
    IndexNoise, Query, RunFile, StorageDtype, DEFAULT_RRF_K,
};
use crate::trainer::{gold_chunk_accuracy, retrieval_recall, run_curriculum, CurriculumConfig, StageKind};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "quantret",
    version,
    about = "Quantization-aware retrieval toolkit",
    args_override_self = true
)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with per-subcommand default flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize float embeddings (JSONL) into a QEMB file.
    Quantize(QuantizeArgs),
    /// Build a searchable index (QEMB plus an `.ids` sidecar).
    Index(IndexArgs),
    /// Exact top-k search of query embeddings against an index.
    Search(SearchArgs),
    /// nDCG@k and Recall@k of a run against qrels.
    Eval(EvalArgs),
    /// Reciprocal rank fusion of several runs.
    Fuse(FuseArgs),
    /// Query-to-query benchmark from a click log.
    BuildQ2q(BuildQ2qArgs),
    /// Query-to-document labels from RRF-fused candidate pools.
    LabelQ2d(LabelQ2dArgs),
    /// Stratified sample of annotated queries.
    Stratify(StratifyArgs),
    /// Run the pair, contextual, triplet and merge curriculum on the synthetic corpus.
    Train(TrainArgs),
    /// SLERP two checkpoints.
    Merge(MergeArgs),
    /// Absorbing-state corruption of token sequences.
    Corrupt(CorruptArgs),
    /// Documents per megabyte for a dimension and storage type.
    Storage(StorageArgs),
    /// Evaluate a contrastive loss on a batch of embeddings.
    Loss(LossArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Quantize(_) => "quantize",
            Command::Index(_) => "index",
            Command::Search(_) => "search",
            Command::Eval(_) => "eval",
            Command::Fuse(_) => "fuse",
            Command::BuildQ2q(_) => "build-q2q",
            Command::LabelQ2d(_) => "label-q2d",
            Command::Stratify(_) => "stratify",
            Command::Train(_) => "train",
            Command::Merge(_) => "merge",
            Command::Corrupt(_) => "corrupt",
            Command::Storage(_) => "storage",
            Command::Loss(_) => "loss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    Int8,
    Binary,
}

impl From<DtypeArg> for QembDtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::Int8 => QembDtype::Int8,
            DtypeArg::Binary => QembDtype::Binary,
        }
    }
}

fn dtype_name(d: QembDtype) -> &'static str {
    match d {
        QembDtype::Int8 => "int8",
        QembDtype::Binary => "binary",
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct QuantizeArgs {
    /// JSONL of `{"embedding": [...]}` objects (an `id` field is ignored).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "int8")]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct IndexArgs {
    /// JSONL of `{"id": ..., "embedding": [...]}`; missing ids become row numbers.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "int8")]
    pub dtype: DtypeArg,
    /// Half-width of seeded uniform jitter added before quantization.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SearchArgs {
    /// QEMB file; ids come from `<index>.ids` when present.
    #[arg(long)]
    pub index: PathBuf,
    /// JSONL of `{"id": ..., "embedding": [...]}`.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// TREC run file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "quantret")]
    pub tag: String,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Cutoffs; each adds `ndcg@k` and `recall@k` to the summary.
    #[arg(long, num_args = 1.., default_values_t = [10])]
    pub k: Vec<usize>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RRF_K)]
    pub k_rrf: f64,
    /// Keep only the top documents of each fused ranking.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "rrf")]
    pub tag: String,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BuildQ2qArgs {
    /// JSONL of `{"query", "url", "timestamp", "language"?, "pii"?}`.
    #[arg(long)]
    pub log: PathBuf,
    /// Receives queries.jsonl, docs.jsonl, clusters.jsonl and qrels.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct LabelQ2dArgs {
    /// JSONL of `{"query": qid, "docs": [doc ids]}`.
    #[arg(long)]
    pub pools: PathBuf,
    /// Judge runs; each scores the pooled documents.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_RRF_K)]
    pub k_rrf: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct StratifyArgs {
    /// JSONL of `{"query", "intent", "form", "language"}`; other fields are kept.
    #[arg(long)]
    pub input: PathBuf,
    /// TOML with `by = [...]`, `strict` and a `[quotas]` table.
    #[arg(long)]
    pub quotas: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Curriculum TOML (`[corpus]`, `[encoder]`, `[[stage]]`, `[merge]`);
    /// the tuned toy setup when omitted.
    #[arg(long)]
    pub curriculum: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Global,
    PerTensor,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct MergeArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub t: f64,
    #[arg(long, value_enum, default_value = "global")]
    pub granularity: GranularityArg,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct CorruptArgs {
    /// JSONL, one array of token ids per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Masking rate; drawn per sequence when omitted.
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub mask_id: u32,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct StorageArgs {
    #[arg(long)]
    pub dim: usize,
    /// int8, binary or float32.
    #[arg(long)]
    pub dtype: StorageDtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Pair,
    Global,
    Seq,
    Batch,
    Local,
    Context,
    Triplet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantArg {
    None,
    Int8,
    Int8Smooth,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct LossArgs {
    /// JSON with `queries`, `docs`, `temperature` and optionally `margin`,
    /// `negatives`, `chunks` and `doc_hashes`.
    #[arg(long)]
    pub batch: PathBuf,
    #[arg(long, value_enum)]
    pub kind: LossArg,
    #[arg(long, value_enum, default_value = "none")]
    pub quantize: QuantArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Average the loss over these embedding prefixes.
    #[arg(long, num_args = 1..)]
    pub matryoshka_dims: Vec<usize>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. The summary line goes to stdout.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&args) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return e.exit_code();
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum ParseFailure {
    Clap(clap::Error),
    Config(Error),
}

fn parse(args: &[OsString]) -> std::result::Result<Cli, ParseFailure> {
    let (Some(path), Some(at)) = (flag_value(args, "--config"), subcommand_position(args)) else {
        return Cli::try_parse_from(args).map_err(ParseFailure::Clap);
    };
    let name = args[at].to_string_lossy();
    let want_seed = flag_value(args, "--seed").is_none();
    let injected = config_flags(Path::new(&path), &name, want_seed).map_err(ParseFailure::Config)?;
    let mut merged = args[..=at].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[at + 1..]);
    Cli::try_parse_from(merged).map_err(ParseFailure::Clap)
}

/// Value of a `--flag value` or `--flag=value` argument anywhere on the line.
fn flag_value(args: &[OsString], flag: &str) -> Option<OsString> {
    let prefix = format!("{flag}=");
    args.iter().enumerate().skip(1).find_map(|(i, a)| {
        let s = a.to_string_lossy();
        if s == flag {
            args.get(i + 1).cloned()
        } else {
            s.strip_prefix(&prefix).map(OsString::from)
        }
    })
}

/// Index of the subcommand name, skipping global flags placed before it.
fn subcommand_position(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--seed" || a == "--config" {
            i += 2;
        } else if a.starts_with("--") {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

fn toml_error(path: &Path, text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
    Error::parse(path, line, e.message().to_owned())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn config_flags(path: &Path, command: &str, want_seed: bool) -> Result<Vec<OsString>> {
    let text = read_text(path)?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| toml_error(path, &text, e))?;
    let mut flags = Vec::new();
    if want_seed {
        if let Some(seed) = table.get("seed") {
            flags.push("--seed".into());
            flags.push(scalar(path, "seed", seed)?.into());
        }
    }
    let Some(section) = table.get(command) else {
        return Ok(flags);
    };
    let section = section
        .as_table()
        .ok_or_else(|| Error::Format(format!("{}: [{command}] must be a table", path.display())))?;
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(false) => {}
            toml::Value::Boolean(true) => flags.push(flag.into()),
            toml::Value::Array(items) => {
                flags.push(flag.into());
                for item in items {
                    flags.push(scalar(path, key, item)?.into());
                }
            }
            other => {
                flags.push(flag.into());
                flags.push(scalar(path, key, other)?.into());
            }
        }
    }
    Ok(flags)
}

fn scalar(path: &Path, key: &str, value: &toml::Value) -> Result<String> {
    match value {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(Error::Format(format!(
            "{}: value of {key:?} must be a scalar",
            path.display()
        ))),
    }
}

/// Runs a parsed command and returns its JSON summary.
pub fn dispatch(cli: &Cli) -> Result<Value> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let mut summary = match &cli.command {
        Command::Quantize(a) => quantize(a)?,
        Command::Index(a) => index(a, seed)?,
        Command::Search(a) => search(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Fuse(a) => fuse(a)?,
        Command::BuildQ2q(a) => build_q2q_cmd(a)?,
        Command::LabelQ2d(a) => label_q2d_cmd(a)?,
        Command::Stratify(a) => stratify(a, seed)?,
        Command::Train(a) => train(a, cli.seed)?,
        Command::Merge(a) => merge(a)?,
        Command::Corrupt(a) => corrupt_cmd(a, seed)?,
        Command::Storage(a) => json!({ "docs_per_mb": storage_efficiency(a.dim, a.dtype)? }),
        Command::Loss(a) => loss(a)?,
    };
    if let Value::Object(map) = &mut summary {
        map.insert("command".into(), cli.command.name().into());
    }
    Ok(summary)
}

#[derive(Debug, Deserialize)]
struct EmbeddingRecord {
    #[serde(default)]
    id: Option<String>,
    embedding: Vec<f64>,
}

fn read_embeddings(path: &Path) -> Result<(Vec<String>, Vec<RawEmbedding>)> {
    let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
    let mut ids = Vec::with_capacity(records.len());
    let mut raws = Vec::with_capacity(records.len());
    for (row, r) in records.into_iter().enumerate() {
        let raw = RawEmbedding::new(r.embedding).map_err(|e| Error::parse(path, row + 1, e.to_string()))?;
        ids.push(r.id.unwrap_or_else(|| row.to_string()));
        raws.push(raw);
    }
    Ok((ids, raws))
}

fn ids_path(index: &Path) -> PathBuf {
    let mut s = index.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let id = line.trim_end_matches('\r');
            if id.trim().is_empty() || id.contains(char::is_whitespace) {
                Err(Error::parse(path, i + 1, format!("bad document id {id:?}")))
            } else {
                Ok(id.to_owned())
            }
        })
        .collect()
}

fn quantize(a: &QuantizeArgs) -> Result<Value> {
    let (_, raws) = read_embeddings(&a.input)?;
    let dim = raws.first().map_or(0, RawEmbedding::dim);
    if let Some((row, r)) = raws.iter().enumerate().find(|(_, r)| r.dim() != dim) {
        return Err(Error::parse(
            &a.input,
            row + 1,
            format!("dimension {} differs from {dim}", r.dim()),
        ));
    }
    let file = match QembDtype::from(a.dtype) {
        QembDtype::Int8 => EmbeddingFile::Int8 {
            dim,
            rows: raws.iter().map(quantize_int8).collect::<Result<_>>()?,
        },
        QembDtype::Binary => EmbeddingFile::Binary {
            dim,
            rows: raws.iter().map(quantize_binary).collect::<Result<_>>()?,
        },
    };
    write_qemb(&a.output, &file)?;
    Ok(json!({
        "rows": file.len(),
        "dim": dim,
        "dtype": dtype_name(file.dtype()),
        "output": a.output,
    }))
}

fn index(a: &IndexArgs, seed: u64) -> Result<Value> {
    let (ids, raws) = read_embeddings(&a.input)?;
    let noise = (a.noise != 0.0).then_some(IndexNoise { seed, scale: a.noise });
    let idx = Index::build(ids, &raws, a.dtype.into(), noise)?;
    write_qemb(&a.output, &idx.to_file())?;
    let sidecar = ids_path(&a.output);
    let mut text = idx.ids().join("\n");
    text.push('\n');
    write_text(&sidecar, &text)?;
    Ok(json!({
        "docs": idx.len(),
        "dim": idx.dim(),
        "dtype": dtype_name(idx.dtype()),
        "output": a.output,
        "ids": sidecar,
    }))
}

fn load_index(path: &Path) -> Result<Index> {
    let file = read_qemb(path)?;
    let sidecar = ids_path(path);
    let ids = if sidecar.exists() {
        Some(read_ids(&sidecar)?)
    } else {
        None
    };
    Index::from_file(&file, ids)
}

fn search(a: &SearchArgs) -> Result<Value> {
    let idx = load_index(&a.index)?;
    let (qids, raws) = read_embeddings(&a.queries)?;
    let mut run = RunFile::new();
    for (row, (qid, raw)) in qids.iter().zip(&raws).enumerate() {
        let q = Query::from_raw(raw, idx.dtype()).map_err(|e| Error::parse(&a.queries, row + 1, e.to_string()))?;
        let hits = idx
            .search_topk(&q, a.k)
            .map_err(|e| Error::parse(&a.queries, row + 1, e.to_string()))?;
        if run.get(qid).is_some() {
            return Err(Error::parse(&a.queries, row + 1, format!("query id {qid:?} repeated")));
        }
        run.insert(qid.clone(), hits)?;
    }
    write_run(&a.output, &run, &a.tag)?;
    Ok(json!({ "queries": run.len(), "k": a.k, "output": a.output }))
}

fn eval(a: &EvalArgs) -> Result<Value> {
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let mut out = Map::new();
    out.insert("queries".into(), qrels.len().into());
    for &k in &a.k {
        out.insert(format!("ndcg@{k}"), ndcg_at_k(&run, &qrels, k)?.into());
        out.insert(format!("recall@{k}"), recall_at_k(&run, &qrels, k)?.into());
    }
    Ok(Value::Object(out))
}

fn fuse(a: &FuseArgs) -> Result<Value> {
    let runs = a.runs.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
    let mut fused = rrf_fuse(&runs, a.k_rrf)?;
    if let Some(depth) = a.depth {
        let mut cut = RunFile::new();
        for (qid, docs) in fused.iter() {
            cut.insert(qid, docs[..docs.len().min(depth)].to_vec())?;
        }
        fused = cut;
    }
    write_run(&a.output, &fused, &a.tag)?;
    Ok(json!({ "runs": runs.len(), "queries": fused.len(), "output": a.output }))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn build_q2q_cmd(a: &BuildQ2qArgs) -> Result<Value> {
    let logs: Vec<LogRecord> = read_jsonl(&a.log)?;
    let bench = build_q2q(&logs);
    create_dir(&a.out_dir)?;
    write_jsonl(&a.out_dir.join("queries.jsonl"), &bench.queries)?;
    write_jsonl(&a.out_dir.join("docs.jsonl"), &bench.docs)?;
    write_jsonl(&a.out_dir.join("clusters.jsonl"), &bench.clusters)?;
    write_qrels(&a.out_dir.join("qrels.txt"), &bench.qrels)?;
    Ok(json!({
        "records": logs.len(),
        "clusters": bench.clusters.len(),
        "queries": bench.queries.len(),
        "docs": bench.docs.len(),
        "judgments": bench.qrels.judgments(),
        "out_dir": a.out_dir,
    }))
}

#[derive(Debug, Deserialize)]
struct PoolRecord {
    query: String,
    docs: Vec<String>,
}

fn label_q2d_cmd(a: &LabelQ2dArgs) -> Result<Value> {
    let records: Vec<PoolRecord> = read_jsonl(&a.pools)?;
    let mut pools = BTreeMap::new();
    for (row, r) in records.into_iter().enumerate() {
        if pools.insert(r.query.clone(), r.docs).is_some() {
            return Err(Error::parse(
                &a.pools,
                row + 1,
                format!("query {:?} pooled twice", r.query),
            ));
        }
    }
    let runs = a.runs.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
    let qrels = label_q2d(&pools, &runs, a.threshold, a.k_rrf)?;
    write_qrels(&a.output, &qrels)?;
    Ok(json!({
        "queries": pools.len(),
        "labelled_queries": qrels.len(),
        "judgments": qrels.judgments(),
        "output": a.output,
    }))
}

#[derive(Debug, Deserialize)]
struct AnnotatedQuery {
    query: String,
    intent: Intent,
    form: Form,
    language: String,
}

fn stratify(a: &StratifyArgs, seed: u64) -> Result<Value> {
    let rows: Vec<Value> = read_jsonl(&a.input)?;
    let metas = rows
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let q = AnnotatedQuery::deserialize(v).map_err(|e| Error::parse(&a.input, i + 1, e.to_string()))?;
            Ok(QueryMeta::new(&q.query, q.intent, q.form, q.language))
        })
        .collect::<Result<Vec<_>>>()?;
    let text = read_text(&a.quotas)?;
    let quotas: Quotas = toml::from_str(&text).map_err(|e| toml_error(&a.quotas, &text, e))?;
    let picked = stratified_sample(&metas, &quotas, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let chosen: Vec<&Value> = picked.iter().map(|&i| &rows[i]).collect();
    write_jsonl(&a.output, &chosen)?;
    Ok(json!({ "candidates": rows.len(), "selected": chosen.len(), "output": a.output }))
}

fn stage_name(kind: StageKind) -> &'static str {
    match kind {
        StageKind::Pair => "pair",
        StageKind::Contextual => "contextual",
        StageKind::Triplet => "triplet",
    }
}

fn train(a: &TrainArgs, seed: Option<u64>) -> Result<Value> {
    let mut config = match &a.curriculum {
        Some(p) => {
            let text = read_text(p)?;
            toml::from_str::<CurriculumConfig>(&text).map_err(|e| toml_error(p, &text, e))?
        }
        None => CurriculumConfig::default(),
    };
    if let Some(s) = seed {
        config.corpus.seed = s;
        config.encoder.seed = s.wrapping_add(1);
        for (i, stage) in config.stages.iter_mut().enumerate() {
            stage.seed = s.wrapping_add(10 + i as u64);
        }
    }
    let (corpus, run) = run_curriculum(&config)?;
    create_dir(&a.out_dir)?;
    for (kind, trace) in &run.traces {
        write_text(&a.out_dir.join(format!("{}.csv", stage_name(*kind))), &trace.to_csv())?;
    }
    let mut checkpoints = vec![("pair", &run.pair)];
    checkpoints.extend(run.contextual.as_ref().map(|e| ("contextual", e)));
    checkpoints.extend(run.triplet.as_ref().map(|e| ("triplet", e)));
    checkpoints.push(("merged", &run.merged));
    for (name, enc) in &checkpoints {
        write_checkpoint(&a.out_dir.join(format!("{name}.qckp")), &enc.to_params())?;
    }
    let k = config.merge.k;
    let mut out = Map::new();
    out.insert("pairs".into(), corpus.pair_count().into());
    out.insert(
        "stages".into(),
        run.traces
            .iter()
            .map(|(k, _)| stage_name(*k))
            .collect::<Vec<_>>()
            .into(),
    );
    out.insert("merge_t".into(), json!(run.merge_t));
    out.insert(
        format!("recall@{k}_int8"),
        retrieval_recall(&run.merged, &corpus.test, QembDtype::Int8, k)?.into(),
    );
    out.insert(
        format!("recall@{k}_binary"),
        retrieval_recall(&run.merged, &corpus.test, QembDtype::Binary, k)?.into(),
    );
    out.insert(
        "gold_chunk_pair".into(),
        gold_chunk_accuracy(&run.pair, &corpus.context_test)?.into(),
    );
    if let Some(ctx) = &run.contextual {
        out.insert(
            "gold_chunk_contextual".into(),
            gold_chunk_accuracy(ctx, &corpus.context_test)?.into(),
        );
    }
    out.insert("out_dir".into(), json!(a.out_dir));
    Ok(Value::Object(out))
}

fn merge(a: &MergeArgs) -> Result<Value> {
    let pa = read_checkpoint(&a.a)?;
    let pb = read_checkpoint(&a.b)?;
    let granularity = match a.granularity {
        GranularityArg::Global => MergeGranularity::Global,
        GranularityArg::PerTensor => MergeGranularity::PerTensor,
    };
    let merged = slerp_with(&pa, &pb, a.t, granularity)?;
    write_checkpoint(&a.output, &merged)?;
    Ok(json!({ "t": a.t, "params": merged.len(), "output": a.output }))
}

#[derive(Debug, Serialize)]
struct CorruptedRecord<'a> {
    t: f64,
    corrupted: &'a [u32],
    masked: &'a [bool],
}

fn corrupt_cmd(a: &CorruptArgs, seed: u64) -> Result<Value> {
    let seqs: Vec<Vec<u32>> = read_jsonl(&a.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(seqs.len());
    for (row, seq) in seqs.iter().enumerate() {
        let t = a.t.unwrap_or_else(|| sample_timestep(&mut rng));
        let c = corrupt(seq, t, a.mask_id, &mut rng).map_err(|e| Error::parse(&a.input, row + 1, e.to_string()))?;
        out.push(c);
    }
    let records: Vec<CorruptedRecord> = out
        .iter()
        .map(|c| CorruptedRecord {
            t: c.t(),
            corrupted: c.corrupted(),
            masked: c.mask_positions(),
        })
        .collect();
    write_jsonl(&a.output, &records)?;
    Ok(json!({
        "sequences": out.len(),
        "tokens": out.iter().map(|c| c.len()).sum::<usize>(),
        "masked": out.iter().map(|c| c.masked_count()).sum::<usize>(),
        "output": a.output,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchSpec {
    queries: Vec<Vec<f64>>,
    docs: Vec<Vec<f64>>,
    temperature: f64,
    #[serde(default)]
    margin: Option<f64>,
    #[serde(default)]
    negatives: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    chunks: Vec<ChunkSpec>,
    #[serde(default)]
    doc_hashes: Vec<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChunkSpec {
    chunks: Vec<Vec<f64>>,
    gold: usize,
}

fn raws(rows: Vec<Vec<f64>>) -> Result<Vec<RawEmbedding>> {
    rows.into_iter().map(RawEmbedding::new).collect()
}

fn loss(a: &LossArgs) -> Result<Value> {
    let text = read_text(&a.batch)?;
    let spec: BatchSpec = serde_json::from_str(&text).map_err(|e| Error::parse(&a.batch, e.line(), e.to_string()))?;
    let mut batch = ContrastiveBatch::new(raws(spec.queries)?, raws(spec.docs)?, spec.temperature)
        .with_margin(spec.margin.unwrap_or(DEFAULT_MARGIN));
    if !spec.negatives.is_empty() {
        batch = batch.with_hard_negatives(spec.negatives.into_iter().map(raws).collect::<Result<_>>()?);
    }
    if !spec.chunks.is_empty() {
        let chunks = spec
            .chunks
            .into_iter()
            .map(|c| {
                Ok(DocChunks {
                    chunks: raws(c.chunks)?,
                    gold: c.gold,
                })
            })
            .collect::<Result<_>>()?;
        batch = batch.with_chunks(chunks);
    }
    if !spec.doc_hashes.is_empty() {
        batch = batch.with_doc_hashes(spec.doc_hashes);
    }
    let kind = match a.kind {
        LossArg::Pair => LossKind::Pair,
        LossArg::Global => LossKind::Global,
        LossArg::Seq => LossKind::Seq,
        LossArg::Batch => LossKind::Batch,
        LossArg::Local => LossKind::Local { alpha: a.alpha },
        LossArg::Context => LossKind::Context {
            alpha: a.alpha,
            beta: a.beta,
        },
        LossArg::Triplet => LossKind::Triplet,
    };
    let quant = match a.quantize {
        QuantArg::None => Quantization::None,
        QuantArg::Int8 => Quantization::Int8,
        QuantArg::Int8Smooth => Quantization::Int8Smooth,
    };
    let result = if a.matryoshka_dims.is_empty() {
        kind.evaluate(&batch, quant)?
    } else {
        matryoshka_wrap(kind, &batch, &a.matryoshka_dims, quant)?
    };
    Ok(json!({ "loss": result.value, "max_abs_grad": result.max_abs_grad() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(args: &[&str]) -> Vec<OsString> {
        args.iter().map(OsString::from).collect()
    }

    #[test]
    fn subcommand_found_after_globals() {
        assert_eq!(
            subcommand_position(&os(&["q", "--seed", "3", "eval", "--k", "5"])),
            Some(3)
        );
        assert_eq!(subcommand_position(&os(&["q", "storage"])), Some(1));
        assert_eq!(subcommand_position(&os(&["q", "--seed"])), None);
        assert_eq!(
            flag_value(&os(&["q", "x", "--config=a.toml"]), "--config"),
            Some("a.toml".into())
        );
        assert_eq!(
            flag_value(&os(&["q", "x", "--config", "b"]), "--config"),
            Some("b".into())
        );
    }

    #[test]
    fn config_table_becomes_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "seed = 5\n[eval]\nk = [1, 10]\n[fuse]\nk_rrf = 30.0\n").unwrap();
        let f = config_flags(&p, "eval", true).unwrap();
        assert_eq!(f, os(&["--seed", "5", "--k", "1", "10"]));
        assert_eq!(config_flags(&p, "fuse", false).unwrap(), os(&["--k-rrf", "30"]));
    }

    #[test]
    fn command_line_beats_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[storage]\ndim = 1024\ndtype = \"binary\"\n").unwrap();
        let cfg = p.to_str().unwrap();
        let cli = parse(&os(&["q", "--config", cfg, "storage", "--dim", "2560"]))
            .ok()
            .unwrap();
        match cli.command {
            Command::Storage(s) => assert_eq!((s.dim, s.dtype), (2560, StorageDtype::Binary)),
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn bad_config_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[eval]\nk = \n").unwrap();
        match config_flags(&p, "eval", false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn storage_summary() {
        let cli = Cli::try_parse_from(["q", "storage", "--dim", "2560", "--dtype", "int8"]).unwrap();
        let v = dispatch(&cli).unwrap();
        assert_eq!(v["docs_per_mb"], 390);
        assert_eq!(v["command"], "storage");
    }
}
