//! Estimating classroom observation scores from transcripts.
//!
//! Utterances are judged one at a time (n-gram counts or LLM indicator
//! probabilities), the judgments are summed per session and z-scored, and
//! an L1-regularized linear model maps them to the score. Because the model
//! is linear, every prediction splits exactly into per-utterance marginal
//! scores, which drive the explanations and the heatmap.

pub mod aggregate;
pub mod bow;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub mod lasso;
pub mod llm;
pub mod render;
pub mod synth;
pub mod workflow;

pub use error::{Error, Result};
