use crate::{AdvisorError, Result};

/// Fixed context shared by every prompt: task description, dataset context
/// and a worked segmentation example.
pub const CONTEXT_PARAGRAPHS: [&str; 3] = [
    "Segment duration refers to the duration of each fixed-length audio segment measured in seconds in a contrastive neural audio fingerprinting model designed for high-specific retrieval. The model generates one embedding per segment, which is later used for similarity-based matching in a large-scale music database.",
    "Dataset context: Training uses 30-second clips from the Free Music Archive (FMA) dataset with strict train, validation, and test splits. Evaluation involves large-scale retrieval, where each track in the database is segmented into fixed windows and the query is matched by nearest-neighbor search in the embedding space.",
    "Example: Consider 1-second segments with a 0.5-second hop capturing a short melodic phrase or drum pattern used to identify its source track in a large database under background noise and small time shifts.",
];

pub const QUESTIONS: [&str; 5] = [
    "What segment duration best balances temporal resolution and discriminative power in this setup?",
    "When audio segments are affected by background noise and small time shifts, what segment duration yields the most stable fingerprints without losing detail?",
    "In a large-scale contrastive audio fingerprinting system, what segment duration provides the best trade-off between retrieval accuracy, speed, and storage cost?",
    "In a large-scale contrastive system, what duration provides the best trade-off between accuracy, speed, and storage cost?",
    "When training with fixed-duration segments but testing with variable-duration queries, which segment duration generalizes best across query lengths?",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptSpec {
    pub question_id: u8,
    pub context_text: &'static [&'static str],
    pub question_text: &'static str,
}

impl PromptSpec {
    pub fn new(question_id: u8) -> Result<Self> {
        let question_text = question_id
            .checked_sub(1)
            .and_then(|i| QUESTIONS.get(i as usize))
            .ok_or(AdvisorError::UnknownQuestion(question_id))?;
        Ok(Self {
            question_id,
            context_text: &CONTEXT_PARAGRAPHS,
            question_text,
        })
    }

    /// Context paragraphs and the question, separated by blank lines.
    pub fn render(&self) -> String {
        let mut parts: Vec<&str> = self.context_text.to_vec();
        parts.push(self.question_text);
        parts.join("\n\n")
    }
}

pub fn build_prompt(question_id: u8) -> Result<String> {
    Ok(PromptSpec::new(question_id)?.render())
}
