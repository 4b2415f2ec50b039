//! Toy encoder and the pair, contextual and triplet training stages,
//! followed by checkpoint merging.

mod corpus;
mod curriculum;
mod data;
mod encoder;
mod eval;
mod stage;

pub use corpus::{ContextDoc, CorpusConfig, RetrievalSet, SyntheticCorpus};
pub use curriculum::{
    run_curriculum, run_curriculum_on, toy_stages, CurriculumConfig, CurriculumRun, EncoderConfig, MergeConfig,
};
pub use data::{sample_batch, sample_source, ChunkQuery, Dataset, DatasetPool, Record};
pub use encoder::ToyEncoder;
pub use eval::{gold_chunk_accuracy, retrieval_recall};
pub use stage::{
    ema, loss_and_grad, loss_value, lr_schedule, run_stage, Objective, StageConfig, StageKind, Trace, TracePoint,
};
