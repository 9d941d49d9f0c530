//! Fusion of upstream emotion predictions with LLM adjustments collected
//! over sliding receptive fields of a dialogue.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`dataset`] loads dialogues whose utterances already carry class
//!    probabilities and dimension scores from an upstream model.
//! 2. [`splitter`] plans the receptive fields (windows) of every dialogue.
//! 3. [`prompter`] assembles window prompts and dialogue summary requests.
//! 4. [`gateway`] sends them to a chat-completion backend, and
//!    [`integrity`] validates the answers and retries failures.
//! 5. [`fusion`] assembles the per-sample prediction matrices and merges
//!    them, with a trainable receptive-field-aware attention.
//! 6. [`metrics`] scores the result.
//!
//! [`pipeline`] wires the stages together; [`synthetic`] generates data for
//! offline experiments with the mock backend.

pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod gateway;
pub mod integrity;
pub mod metrics;
pub mod pipeline;
pub mod prompter;
pub mod schema;
pub mod splitter;
pub mod synthetic;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use schema::{Dialogue, DimensionScores, EmotionSchema, Utterance};
