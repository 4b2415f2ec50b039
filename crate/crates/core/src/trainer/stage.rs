use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    beta_schedule, doc_hash, matryoshka_wrap, ContrastiveBatch, DocChunks, LossKind, Quantization, DEFAULT_ALPHA,
    DEFAULT_HARD_NEGATIVES, DEFAULT_MARGIN, PAIR_TEMPERATURE, TRIPLET_TEMPERATURE,
};
use crate::quantizer::{chunk_pool, RawEmbedding, Span};

use super::data::{sample_batch, sample_source, DatasetPool, Record};
use super::encoder::ToyEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Pair,
    Contextual,
    Triplet,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Pair => "pair",
            StageKind::Contextual => "contextual",
            StageKind::Triplet => "triplet",
        }
    }
}

/// Hyperparameters of one training stage. Unset fields take the
/// stage-appropriate defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub kind: StageKind,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Linear warmup length as a fraction of `steps`.
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    /// Cosine decay length as a fraction of `steps`, taken from the end.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "default_k")]
    pub hard_negatives: usize,
    #[serde(default)]
    pub matryoshka_dims: Vec<usize>,
    #[serde(default)]
    pub quantize: Quantization,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Dataset names the stage draws from; empty means every dataset.
    #[serde(default)]
    pub datasets: Vec<String>,
    /// Successive dataset subsets; steps are split evenly between them.
    #[serde(default)]
    pub phases: Vec<Vec<String>>,
}

fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    0.5
}
fn default_warmup() -> f64 {
    0.05
}
fn default_decay() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    DEFAULT_MARGIN
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_beta_start() -> f64 {
    0.2
}
fn default_beta_end() -> f64 {
    0.5
}
fn default_k() -> usize {
    DEFAULT_HARD_NEGATIVES
}
fn default_clip() -> f64 {
    1.0
}

impl StageConfig {
    pub fn new(kind: StageKind, steps: usize) -> Self {
        Self {
            kind,
            steps,
            batch_size: default_batch(),
            lr: default_lr(),
            warmup: default_warmup(),
            decay: default_decay(),
            temperature: None,
            margin: default_margin(),
            alpha: default_alpha(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            hard_negatives: default_k(),
            matryoshka_dims: Vec::new(),
            quantize: Quantization::None,
            clip: default_clip(),
            weight_decay: 0.0,
            seed: 0,
            datasets: Vec::new(),
            phases: Vec::new(),
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature.unwrap_or(match self.kind {
            StageKind::Triplet => TRIPLET_TEMPERATURE,
            _ => PAIR_TEMPERATURE,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("{} stage: {m}", self.kind.name())));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("invalid learning rate {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.warmup) || !(0.0..=1.0).contains(&self.decay) || self.warmup + self.decay > 1.0 {
            return bad(format!(
                "warmup {} and decay {} must be fractions summing to at most 1",
                self.warmup, self.decay
            ));
        }
        if !(self.temperature() > 0.0) {
            return bad("temperature must be positive".into());
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive".into());
        }
        if self.kind == StageKind::Triplet && self.hard_negatives == 0 {
            return bad("triplet training needs at least one hard negative".into());
        }
        if !self.datasets.is_empty() && !self.phases.is_empty() {
            return bad("set either datasets or phases, not both".into());
        }
        Ok(())
    }

    /// `(warmup, stable_until)` in steps.
    pub fn schedule_bounds(&self) -> (usize, usize) {
        let warmup = (self.warmup * self.steps as f64).round() as usize;
        let decay = (self.decay * self.steps as f64).round() as usize;
        (warmup, self.steps.saturating_sub(decay).max(warmup))
    }

    pub fn objective(&self, beta: f64) -> Objective {
        Objective {
            kind: match self.kind {
                StageKind::Pair => LossKind::Pair,
                StageKind::Contextual => LossKind::Context {
                    alpha: self.alpha,
                    beta,
                },
                StageKind::Triplet => LossKind::Triplet,
            },
            quant: self.quantize,
            temperature: self.temperature(),
            margin: self.margin,
            matryoshka_dims: self.matryoshka_dims.clone(),
        }
    }
}

/// Warmup-stable-decay: linear `0 -> peak` on `[0, warmup)`, constant on
/// `[warmup, stable_until)`, cosine `peak -> 0` on `[stable_until, total]`.
pub fn lr_schedule(step: usize, warmup: usize, stable_until: usize, total: usize, peak: f64) -> Result<f64> {
    if warmup > stable_until || stable_until > total {
        return Err(Error::InvalidArgument(format!(
            "need warmup {warmup} <= stable_until {stable_until} <= total {total}"
        )));
    }
    if step > total {
        return Err(Error::InvalidArgument(format!("step {step} beyond total {total}")));
    }
    Ok(if step < warmup {
        peak * step as f64 / warmup as f64
    } else if step < stable_until {
        peak
    } else if total == stable_until {
        0.0
    } else {
        let progress = (step - stable_until) as f64 / (total - stable_until) as f64;
        peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    })
}

/// What a batch is scored with.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub kind: LossKind,
    pub quant: Quantization,
    pub temperature: f64,
    pub margin: f64,
    /// Empty for a single full-width loss.
    pub matryoshka_dims: Vec<usize>,
}

/// Token ids behind every embedding of a batch, aligned with
/// [`ContrastiveBatch`] fields.
struct Sources<'a> {
    queries: Vec<&'a [u32]>,
    docs: Vec<Vec<u32>>,
    negatives: Vec<Vec<&'a [u32]>>,
    chunks: Vec<Vec<&'a [u32]>>,
}

fn gather<'a>(records: &'a [Record], kind: LossKind) -> Result<Sources<'a>> {
    let mut s = Sources {
        queries: Vec::new(),
        docs: Vec::new(),
        negatives: Vec::new(),
        chunks: Vec::new(),
    };
    let contextual = matches!(
        kind,
        LossKind::Seq | LossKind::Batch | LossKind::Local { .. } | LossKind::Context { .. } | LossKind::Global
    );
    for r in records {
        match r {
            Record::Pair { query, doc } if !contextual && kind != LossKind::Triplet => {
                s.queries.push(query);
                s.docs.push(doc.clone());
            }
            Record::Triplet {
                query,
                positive,
                negatives,
            } if !contextual => {
                s.queries.push(query);
                s.docs.push(positive.clone());
                if kind == LossKind::Triplet {
                    s.negatives.push(negatives.iter().map(Vec::as_slice).collect());
                }
            }
            Record::Context { chunks, queries } if contextual => {
                let doc: Vec<u32> = chunks.concat();
                for q in queries {
                    s.queries.push(&q.query);
                    s.docs.push(doc.clone());
                    s.chunks.push(chunks.iter().map(Vec::as_slice).collect());
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "{kind:?} loss cannot use a {} record",
                    match other {
                        Record::Pair { .. } => "pair",
                        Record::Context { .. } => "context",
                        Record::Triplet { .. } => "triplet",
                    }
                )))
            }
        }
    }
    if s.queries.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(s)
}

fn assemble<'a>(
    encoder: &ToyEncoder,
    records: &'a [Record],
    objective: &Objective,
) -> Result<(ContrastiveBatch, Sources<'a>)> {
    let src = gather(records, objective.kind)?;
    let embed = |ids: &[u32]| encoder.embed(ids);
    let queries = src.queries.iter().map(|q| embed(q)).collect::<Result<Vec<_>>>()?;
    let docs = src.docs.iter().map(|d| embed(d)).collect::<Result<Vec<_>>>()?;
    let mut batch = ContrastiveBatch::new(queries, docs, objective.temperature).with_margin(objective.margin);
    if !src.negatives.is_empty() {
        let negs = src
            .negatives
            .iter()
            .map(|l| l.iter().map(|n| embed(n)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        batch = batch.with_hard_negatives(negs);
    }
    if !src.chunks.is_empty() {
        let mut gold_iter = records.iter().flat_map(|r| match r {
            Record::Context { queries, .. } => queries.iter().map(|q| q.gold).collect::<Vec<_>>(),
            _ => Vec::new(),
        });
        let mut docs_chunks = Vec::with_capacity(src.chunks.len());
        for (doc, chunk_ids) in src.docs.iter().zip(&src.chunks) {
            let mut spans = Vec::with_capacity(chunk_ids.len());
            let mut start = 0;
            for c in chunk_ids {
                spans.push(Span::new(start, start + c.len()));
                start += c.len();
            }
            let pooled: Vec<RawEmbedding> = chunk_pool(&encoder.encode(doc)?.with_spans(spans)?)?;
            docs_chunks.push(DocChunks {
                chunks: pooled,
                gold: gold_iter.next().expect("one gold per query"),
            });
        }
        let hashes = src
            .docs
            .iter()
            .map(|d| doc_hash(&d.iter().flat_map(|t| t.to_le_bytes()).collect::<Vec<_>>()))
            .collect();
        batch = batch.with_chunks(docs_chunks).with_doc_hashes(hashes);
    }
    Ok((batch, src))
}

fn score(batch: &ContrastiveBatch, objective: &Objective) -> Result<crate::losses::LossResult> {
    if objective.matryoshka_dims.is_empty() {
        objective.kind.evaluate(batch, objective.quant)
    } else {
        matryoshka_wrap(objective.kind, batch, &objective.matryoshka_dims, objective.quant)
    }
}

/// Loss of `records` under `objective`.
pub fn loss_value(encoder: &ToyEncoder, records: &[Record], objective: &Objective) -> Result<f64> {
    let (batch, _) = assemble(encoder, records, objective)?;
    Ok(score(&batch, objective)?.value)
}

/// Loss and its gradient with respect to the flattened encoder parameters.
pub fn loss_and_grad(encoder: &ToyEncoder, records: &[Record], objective: &Objective) -> Result<(f64, Vec<f64>)> {
    let (batch, src) = assemble(encoder, records, objective)?;
    let res = score(&batch, objective)?;
    let mut grad = vec![0.0; encoder.flat().len()];
    for (ids, g) in src.queries.iter().zip(&res.grad_queries) {
        encoder.backprop_mean(ids, g, &mut grad)?;
    }
    for (ids, g) in src.docs.iter().zip(&res.grad_docs) {
        encoder.backprop_mean(ids, g, &mut grad)?;
    }
    for (ids, g) in src.negatives.iter().zip(&res.grad_negatives) {
        for (n, gn) in ids.iter().zip(g) {
            encoder.backprop_mean(n, gn, &mut grad)?;
        }
    }
    for (ids, g) in src.chunks.iter().zip(&res.grad_chunks) {
        for (c, gc) in ids.iter().zip(g) {
            encoder.backprop_mean(c, gc, &mut grad)?;
        }
    }
    Ok((res.value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub beta: Option<f64>,
    pub dataset: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub points: Vec<TracePoint>,
}

impl Trace {
    /// `step,loss,lr,beta` with an empty beta outside contextual training.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,lr,beta\n");
        for p in &self.points {
            let beta = p.beta.map(|b| b.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", p.step, p.loss, p.lr, beta).unwrap();
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.loss).collect()
    }
}

/// Exponential moving average with weight `alpha` on the newest value.
pub fn ema(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => alpha * v + (1.0 - alpha) * a,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

/// Runs `config.steps` clipped gradient-descent steps on `encoder`.
pub fn run_stage(encoder: &mut ToyEncoder, config: &StageConfig, pool: &DatasetPool) -> Result<Trace> {
    config.validate()?;
    let phases: Vec<DatasetPool> = if !config.phases.is_empty() {
        config.phases.iter().map(|p| pool.select(p)).collect::<Result<_>>()?
    } else if !config.datasets.is_empty() {
        vec![pool.select(&config.datasets)?]
    } else {
        vec![pool.clone()]
    };
    let per_phase = config.steps.div_ceil(phases.len()).max(1);
    let (warmup, stable_until) = config.schedule_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Trace::default();
    for step in 0..config.steps {
        let phase = &phases[(step / per_phase).min(phases.len() - 1)];
        let lr = lr_schedule(step, warmup, stable_until, config.steps, config.lr)?;
        let beta = match config.kind {
            StageKind::Contextual => Some(beta_schedule(step, config.steps, config.beta_start, config.beta_end)?),
            _ => None,
        };
        let dataset = sample_source(phase, &mut rng);
        let mut records = sample_batch(dataset, config.batch_size, &mut rng);
        if config.kind == StageKind::Triplet {
            for r in &mut records {
                if let Record::Triplet { negatives, .. } = r {
                    if negatives.len() < config.hard_negatives {
                        return Err(Error::InvalidArgument(format!(
                            "triplet record has {} hard negatives, stage needs {}",
                            negatives.len(),
                            config.hard_negatives
                        )));
                    }
                    negatives.truncate(config.hard_negatives);
                }
            }
        }
        let objective = config.objective(beta.unwrap_or(0.0));
        let (loss, mut grad) = loss_and_grad(encoder, &records, &objective)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > config.clip {
            let s = config.clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        for (p, g) in encoder.flat_mut().iter_mut().zip(&grad) {
            *p -= lr * (g + config.weight_decay * *p);
        }
        trace.points.push(TracePoint {
            step,
            loss,
            lr,
            beta,
            dataset: dataset.name.clone(),
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::data::Dataset;

    #[test]
    fn lr_examples() {
        let f = |s| lr_schedule(s, 10, 50, 100, 2.0).unwrap();
        assert_eq!(f(0), 0.0);
        assert_eq!(f(5), 1.0);
        assert_eq!(f(10), 2.0);
        assert_eq!(f(49), 2.0);
        assert!((f(75) - 1.0).abs() < 1e-12);
        assert!(f(100).abs() < 1e-12);
        assert!(lr_schedule(101, 10, 50, 100, 2.0).is_err());
        assert!(lr_schedule(0, 60, 50, 100, 2.0).is_err());
    }

    #[test]
    fn ema_smooths() {
        assert_eq!(ema(&[1.0, 0.0], 0.5), vec![1.0, 0.5]);
        assert!(ema(&[], 0.02).is_empty());
    }

    fn pool() -> DatasetPool {
        let recs = (0..8u32)
            .map(|i| Record::Pair {
                query: vec![i, i + 8],
                doc: vec![i, i + 8, 16 + i % 2],
            })
            .collect();
        DatasetPool::new(vec![Dataset::new("toy", recs)]).unwrap()
    }

    #[test]
    fn zero_steps_leave_encoder_unchanged() {
        let mut enc = ToyEncoder::random(20, 4, 4, 1).unwrap();
        let before = enc.clone();
        let trace = run_stage(&mut enc, &StageConfig::new(StageKind::Pair, 0), &pool()).unwrap();
        assert!(trace.points.is_empty());
        assert_eq!(enc, before);
    }

    #[test]
    fn deterministic_and_record_kind_checked() {
        let mut cfg = StageConfig::new(StageKind::Pair, 5);
        cfg.batch_size = 4;
        let mut a = ToyEncoder::random(20, 4, 4, 1).unwrap();
        let mut b = a.clone();
        let ta = run_stage(&mut a, &cfg, &pool()).unwrap();
        let tb = run_stage(&mut b, &cfg, &pool()).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        cfg.kind = StageKind::Contextual;
        assert!(run_stage(&mut a, &cfg, &pool()).is_err());
    }

    #[test]
    fn csv_columns() {
        let t = Trace {
            points: vec![TracePoint {
                step: 0,
                loss: 1.5,
                lr: 0.0,
                beta: Some(0.2),
                dataset: "x".into(),
            }],
        };
        assert_eq!(t.to_csv(), "step,loss,lr,beta\n0,1.5,0,0.2\n");
    }
}
