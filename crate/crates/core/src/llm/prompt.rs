//! Prompt rendering and answer parsing.

use crate::data::{QuestionMeta, CHOICE_LABELS, WARMUP_LEN};

use super::LlmError;

pub const PROMPT_HEADER: &str = "The student answered the following questions:";
pub const PROMPT_INSTRUCTION: &str = "Answer ONLY with the word 'Yes' or the word 'No'.";

/// What the model is shown: an answered history and the question to predict.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSpec {
    pub history: Vec<(QuestionMeta, bool)>,
    pub target: QuestionMeta,
}

impl PromptSpec {
    pub fn new(history: Vec<(QuestionMeta, bool)>, target: QuestionMeta) -> Result<Self, LlmError> {
        if history.len() < WARMUP_LEN {
            return Err(LlmError::ShortHistory(history.len()));
        }
        Ok(Self { history, target })
    }
}

/// `What is 2 + 3 × 4? (A: 20, B: 14, C: 11, D: 26)`.
fn question_with_choices(q: &QuestionMeta) -> Result<String, LlmError> {
    if q.choices.len() != 4
        || q.choices
            .iter()
            .zip(CHOICE_LABELS)
            .any(|(c, l)| c.label != l)
    {
        return Err(LlmError::MissingChoice(q.question_id));
    }
    let list: Vec<String> = q
        .choices
        .iter()
        .map(|c| format!("{}: {}", c.label, c.text))
        .collect();
    Ok(format!("{} ({})", q.question_text, list.join(", ")))
}

fn describe(q: &QuestionMeta) -> Result<String, LlmError> {
    Ok(format!(
        "Question ID {} ({}), with construct ID {} ({})",
        q.question_id,
        question_with_choices(q)?,
        q.construct_id,
        q.construct_text
    ))
}

/// Renders the prompt. Lines are joined with `\n`; there is no trailing
/// newline.
pub fn build_prompt(spec: &PromptSpec) -> Result<String, LlmError> {
    if spec.history.len() < WARMUP_LEN {
        return Err(LlmError::ShortHistory(spec.history.len()));
    }
    let mut lines = Vec::with_capacity(spec.history.len() + 3);
    lines.push(PROMPT_HEADER.to_string());
    for (q, correct) in &spec.history {
        let outcome = if *correct { "correctly" } else { "incorrectly" };
        lines.push(format!("{}: answered {outcome}", describe(q)?));
    }
    lines.push(format!(
        "Predict whether the student will answer {} correctly or not.",
        describe(&spec.target)?
    ));
    lines.push(PROMPT_INSTRUCTION.to_string());
    Ok(lines.join("\n"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Verdict {
    Yes,
    No,
    Malformed,
}

/// Maps the first whitespace-separated token, with surrounding punctuation
/// removed and case folded, to a verdict.
pub fn parse_response(text: &str) -> Verdict {
    let token = text.split_whitespace().next().unwrap_or("");
    let token = token
        .trim_matches(|c: char| c.is_ascii_punctuation() || matches!(c, '‘' | '’' | '“' | '”'));
    match token.to_lowercase().as_str() {
        "yes" => Verdict::Yes,
        "no" => Verdict::No,
        _ => Verdict::Malformed,
    }
}
