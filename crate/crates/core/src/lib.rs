//! Knowledge-augmented zero-shot prompting pipelines and an evaluation
//! harness for social-media classification tasks.
//!
//! The crate is organized around a small set of pure modules (types,
//! templates, parsing, metrics) and the machinery that drives experiments
//! against an OpenAI-compatible chat endpoint or a deterministic replay
//! backend (gateway, pipelines, evaluation, reporting).

pub mod config;
pub mod evaluation;
pub mod gateway;
pub mod ingest;
pub mod metrics;
pub mod parsing;
pub mod pipelines;
pub mod reporting;
pub mod templates;
pub mod types;

pub use types::{
    CoreError, Example, GenerationParams, Hint, KnowledgeKind, LabelDef, Message, Prediction, Role,
    StrategyKind, TaskSpec,
};
