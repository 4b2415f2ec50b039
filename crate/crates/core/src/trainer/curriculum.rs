use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Quantization;
use crate::merge::{slerp_with, MergeGranularity};
use crate::quantizer::QembDtype;

use super::corpus::{CorpusConfig, SyntheticCorpus};
use super::encoder::ToyEncoder;
use super::eval::retrieval_recall;
use super::stage::{run_stage, StageConfig, StageKind, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_in: usize,
    pub d: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_in: 32,
            d: 32,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    /// Interpolation weights tried between the contextual (t = 0) and
    /// triplet (t = 1) checkpoints.
    pub candidates: Vec<f64>,
    pub granularity: MergeGranularity,
    /// Checkpoint the triplet stage starts from: `contextual` or `pair`.
    pub triplet_from: StageKind,
    /// Cutoff of the validation recall used for selection.
    pub k: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            candidates: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            granularity: MergeGranularity::Global,
            triplet_from: StageKind::Contextual,
            k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "toy_stages", rename = "stage")]
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub merge: MergeConfig,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            encoder: EncoderConfig::default(),
            stages: toy_stages(),
            merge: MergeConfig::default(),
        }
    }
}

/// Stage settings tuned for the default synthetic corpus.
pub fn toy_stages() -> Vec<StageConfig> {
    let mut pair = StageConfig::new(StageKind::Pair, 10_000);
    pair.quantize = Quantization::Int8;
    pair.seed = 11;
    pair.phases = vec![
        vec!["en".into()],
        vec!["en".into(), "xling".into()],
        vec!["en".into(), "xling".into(), "multi".into()],
    ];
    let mut ctx = StageConfig::new(StageKind::Contextual, 1_000);
    ctx.batch_size = 16;
    ctx.lr = 0.3;
    ctx.quantize = Quantization::Int8;
    ctx.matryoshka_dims = vec![16, 32];
    ctx.seed = 12;
    let mut tri = StageConfig::new(StageKind::Triplet, 5_000);
    tri.batch_size = 16;
    tri.lr = 0.3;
    tri.quantize = Quantization::Int8;
    tri.seed = 13;
    for s in [&mut pair, &mut ctx, &mut tri] {
        s.weight_decay = 5e-4;
    }
    vec![pair, ctx, tri]
}

impl CurriculumConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("curriculum config: {e}")))
    }

    fn stage(&self, kind: StageKind) -> Option<&StageConfig> {
        self.stages.iter().find(|s| s.kind == kind)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.first().map(|s| s.kind) != Some(StageKind::Pair) {
            return Err(Error::MissingComponent("pair stage"));
        }
        if self.stages.windows(2).any(|w| w[0].kind >= w[1].kind) {
            return Err(Error::InvalidArgument(
                "stages must appear once each, ordered pair, contextual, triplet".into(),
            ));
        }
        if self.stage(StageKind::Triplet).is_some()
            && self.merge.triplet_from == StageKind::Contextual
            && self.stage(StageKind::Contextual).is_none()
        {
            return Err(Error::MissingComponent("contextual stage"));
        }
        if self.merge.triplet_from == StageKind::Triplet {
            return Err(Error::InvalidArgument("triplet_from must be pair or contextual".into()));
        }
        if self.merge.candidates.is_empty() || self.merge.candidates.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument(
                "merge candidates must be non-empty and within [0, 1]".into(),
            ));
        }
        self.stages.iter().try_for_each(StageConfig::validate)
    }
}

#[derive(Debug, Clone)]
pub struct CurriculumRun {
    pub pair: ToyEncoder,
    pub contextual: Option<ToyEncoder>,
    pub triplet: Option<ToyEncoder>,
    /// Final model: the merge when both contextual and triplet checkpoints
    /// exist, otherwise the last trained stage.
    pub merged: ToyEncoder,
    pub merge_t: Option<f64>,
    /// `(t, validation recall)` for every merge candidate.
    pub selection: Vec<(f64, f64)>,
    pub traces: Vec<(StageKind, Trace)>,
}

pub fn run_curriculum(config: &CurriculumConfig) -> Result<(SyntheticCorpus, CurriculumRun)> {
    config.validate()?;
    let corpus = SyntheticCorpus::build(&config.corpus)?;
    let run = run_curriculum_on(config, &corpus)?;
    Ok((corpus, run))
}

pub fn run_curriculum_on(config: &CurriculumConfig, corpus: &SyntheticCorpus) -> Result<CurriculumRun> {
    config.validate()?;
    let e = &config.encoder;
    let mut pair = ToyEncoder::random(corpus.config.vocab, e.d_in, e.d, e.seed)?;
    let mut traces = Vec::new();
    traces.push((StageKind::Pair, run_stage(&mut pair, &config.stages[0], &corpus.pairs)?));

    let contextual = match config.stage(StageKind::Contextual) {
        Some(cfg) => {
            let mut enc = pair.clone();
            traces.push((StageKind::Contextual, run_stage(&mut enc, cfg, &corpus.contextual)?));
            Some(enc)
        }
        None => None,
    };
    let triplet = match config.stage(StageKind::Triplet) {
        Some(cfg) => {
            let mut enc = match config.merge.triplet_from {
                StageKind::Contextual => contextual.clone().expect("validated"),
                _ => pair.clone(),
            };
            traces.push((StageKind::Triplet, run_stage(&mut enc, cfg, &corpus.triplets)?));
            Some(enc)
        }
        None => None,
    };

    let mut selection = Vec::new();
    let (merged, merge_t) = match (&contextual, &triplet) {
        (Some(c), Some(t)) => {
            let (cp, tp) = (c.to_params(), t.to_params());
            let mut best: Option<(f64, f64, ToyEncoder)> = None;
            for &w in &config.merge.candidates {
                let enc = ToyEncoder::from_params(
                    c.vocab(),
                    c.d_in(),
                    c.dim(),
                    &slerp_with(&cp, &tp, w, config.merge.granularity)?,
                )?;
                let recall = retrieval_recall(&enc, &corpus.validation, QembDtype::Int8, config.merge.k)?;
                selection.push((w, recall));
                // ties go to the larger weight, i.e. closer to the later stage
                if best
                    .as_ref()
                    .is_none_or(|(bw, r, _)| recall > *r || (recall == *r && w > *bw))
                {
                    best = Some((w, recall, enc));
                }
            }
            let (w, _, enc) = best.expect("at least one candidate");
            (enc, Some(w))
        }
        _ => (
            triplet
                .clone()
                .or_else(|| contextual.clone())
                .unwrap_or_else(|| pair.clone()),
            None,
        ),
    };
    Ok(CurriculumRun {
        pair,
        contextual,
        triplet,
        merged,
        merge_t,
        selection,
        traces,
    })
}
