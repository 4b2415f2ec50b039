//! Quantization-aware contrastive retrieval.
//!
//! - [`quantizer`]: mean/chunk pooling, INT8 and binary quantization, QEMB files
//! - [`losses`]: pair, contextual (seq/batch/global) and triplet InfoNCE losses
//!   with analytic gradients, masks, schedules and the Matryoshka wrapper
//! - [`diffusion`]: absorbing-state corruption and the masked ELBO
//! - [`merge`]: SLERP of flattened parameters and QCKP checkpoints
//! - [`trainer`]: toy encoder and the pair → contextual → triplet → merge curriculum
//! - [`retrieval`]: exact quantized search, nDCG/Recall/match metrics, RRF, TREC files
//! - [`benchbuild`]: query-to-query and query-to-document benchmark construction
//! - [`cli`]: the `quantret` command line

pub mod benchbuild;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod jsonl;
pub mod losses;
pub mod merge;
pub mod quantizer;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
