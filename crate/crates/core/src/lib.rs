//! Fidelity-enriched contrastive search (FECS) and baseline decoding
//! strategies over a pluggable language-model backend.
//!
//! The crate is organised bottom-up:
//!
//! * [`backend`]: the [`LanguageModel`] abstraction, an exact synthetic
//!   model for desk-scale verification, and an HTTP client for the JSON
//!   wire protocol.
//! * [`scoring`]: cosine similarity, degeneration penalty, faithfulness
//!   reward and the composite objective over a top-k candidate set.
//! * [`decoders`]: greedy, beam, nucleus, contrastive and FECS loops.
//! * [`context`]: few-shot prompt rendering and prompt/source segmentation.
//! * [`metrics`]: Rep-n, diversity and per-method aggregation.
//! * [`harness`]: experiment configuration, datasets, runs and latency
//!   measurement used by the `fecs` command-line tool.

pub mod backend;
pub mod context;
pub mod decoders;
mod error;
pub mod harness;
pub mod metrics;
pub mod scoring;

pub use backend::{
    BackendInfo, HiddenVector, LanguageModel, NextDistribution, RemoteBackend, SyntheticBackend,
    SyntheticModelSpec, TokenId,
};
pub use context::{SegmentedSequence, Task, TaskTemplate};
pub use decoders::{DecodeConfig, DecodeOutput, DecodeTrace, StopReason, Strategy};
pub use error::{Error, Result};
pub use metrics::{DiversityReport, GenerationRecord};
pub use scoring::{CandidateSet, MixWeights, ScoreBreakdown};
