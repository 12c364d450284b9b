//! Zero-shot emotion classification with natural language inference.
//!
//! Each emotion is turned into one or more hypotheses ("This text expresses
//! joy", "This person feels anxious", ...). An NLI backend scores every
//! (text, hypothesis) pair, and the label whose hypotheses are most entailed
//! wins. Several prompt methods can be combined into an ensemble.

pub mod aggregation;
pub mod cache;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod lexicon;
pub mod nli;
pub mod prompts;
pub mod remote;
pub mod taxonomy;
pub mod text;

pub use error::{Error, Result};
pub use nli::{MockBackend, NliBackend, ScoreRequest, ScoreTriple, ScoringMode};
pub use prompts::{MethodSet, PromptContext, PromptMethod, PromptVariant};
pub use taxonomy::{EmotionLabel, LabelSet};
