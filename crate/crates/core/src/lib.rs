//! LLM-aware in-context example selection for code generation.
//!
//! The pipeline labels candidate examples by how much each raises an LLM's
//! log-probability of a ground-truth program ([`labeling`]), trains a
//! contrastive projection head on those labels ([`training`]), uses it to pick
//! and order few-shot examples ([`selection`]), and measures the resulting
//! prompts with Pass@k ([`evaluation`]).

pub mod corpus;
pub mod evaluation;
pub mod gateway;
pub mod jsonl;
pub mod labeling;
pub mod lexical;
pub mod rng;
pub mod selection;
pub mod synthetic;
pub mod training;
pub mod vector;

pub use corpus::{load_dataset, validate_dataset, Dataset, Example, SplitPaths};
pub use gateway::{Embedder, GatewayError, GenerationParams, Generator, ProviderConfig, ScoreResult, Scorer};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
