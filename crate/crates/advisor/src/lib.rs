//! Asks language models for a segment length, parses the interval they
//! recommend, and scores it against a measured hit-rate report.

mod client;
mod parse;
mod prompt;
mod score;

pub use client::{LiveClient, LlmClient, ReplayClient, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};
pub use parse::{parse_recommendation, Recommendation};
pub use prompt::{build_prompt, PromptSpec, CONTEXT_PARAGRAPHS, QUESTIONS};
pub use score::{
    best_window, score_against_empirical, summarize_model, ModelSummary, CONSISTENCY_THRESHOLD_S,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AdvisorError {
    #[error("unknown question id {0}; expected 1 to 5")]
    UnknownQuestion(u8),
    #[error("no segment duration found in response")]
    NoDurationFound,
    #[error("report needs at least two segment lengths competing on one query length")]
    InsufficientReport,
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("missing replay file {0}")]
    MissingReplayFile(PathBuf),
    #[error("need {expected} recommendations, got {got}")]
    WrongCount { expected: usize, got: usize },
}

pub type Result<T, E = AdvisorError> = std::result::Result<T, E>;
