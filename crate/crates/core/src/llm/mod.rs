//! Prompting chat-completion endpoints for response prediction.

mod client;
mod prompt;

use thiserror::Error;

pub use client::{
    estimate_tokens, predict_batch, ChatReply, ChatRequest, ChatTransport, EndpointConfig,
    HttpTransport, LlmVerdict, Message, RateLimiter, TransportError,
};
pub use prompt::{
    build_prompt, parse_response, PromptSpec, Verdict, PROMPT_HEADER, PROMPT_INSTRUCTION,
};

use crate::data::{EvalSequence, QuestionMeta};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("question {0} does not have choices A-D")]
    MissingChoice(u32),
    #[error("history has {0} interactions, at least 10 are required")]
    ShortHistory(usize),
    #[error("question {0} is not in the question table")]
    UnknownQuestion(u32),
    #[error("{verdicts} verdicts but {labels} labels")]
    LengthMismatch { verdicts: usize, labels: usize },
    #[error("endpoint rejected credentials: {0}")]
    Auth(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Turns verdicts into hard predictions. A malformed answer always counts as
/// a wrong prediction.
pub fn score_verdicts(verdicts: &[Verdict], labels: &[bool]) -> Result<Vec<bool>, LlmError> {
    if verdicts.len() != labels.len() {
        return Err(LlmError::LengthMismatch {
            verdicts: verdicts.len(),
            labels: labels.len(),
        });
    }
    Ok(verdicts
        .iter()
        .zip(labels)
        .map(|(v, &l)| match v {
            Verdict::Yes => true,
            Verdict::No => false,
            Verdict::Malformed => !l,
        })
        .collect())
}

/// One prompt per target of a sequence, each with the full preceding
/// history. Returns the specs and their labels.
pub fn specs_for_sequence(
    seq: &EvalSequence,
    questions: &std::collections::BTreeMap<u32, QuestionMeta>,
) -> Result<Vec<(PromptSpec, bool)>, LlmError> {
    let meta = |q: u32| {
        questions
            .get(&q)
            .cloned()
            .ok_or(LlmError::UnknownQuestion(q))
    };
    let all = seq.interactions();
    seq.target_range()
        .map(|k| {
            let history = all[..k]
                .iter()
                .map(|i| Ok((meta(i.question_id)?, i.correct)))
                .collect::<Result<Vec<_>, LlmError>>()?;
            Ok((
                PromptSpec::new(history, meta(all[k].question_id)?)?,
                all[k].correct,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{accuracy, confusion, ConfusionCounts};

    #[test]
    fn all_malformed_scores_zero() {
        let labels = [true, false, true, true];
        let preds = score_verdicts(&[Verdict::Malformed; 4], &labels).unwrap();
        assert_eq!(accuracy(&confusion(&preds, &labels).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn always_yes_matches_bias() {
        let labels: Vec<bool> = (0..200).map(|i| i < 133).collect();
        let preds = score_verdicts(&vec![Verdict::Yes; 200], &labels).unwrap();
        assert!((accuracy(&confusion(&preds, &labels).unwrap()).unwrap() - 0.665).abs() < 1e-15);
    }

    #[test]
    fn mixed_fixture_hand_scored() {
        use Verdict::*;
        let v = [Yes, Yes, No, No, Malformed, Malformed, Yes, No];
        let l = [true, false, false, true, true, false, true, false];
        let c = confusion(&score_verdicts(&v, &l).unwrap(), &l).unwrap();
        // yes/true tp, yes/false fp, no/false tn, no/true fn,
        // malformed/true fn, malformed/false fp, yes/true tp, no/false tn
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                tn: 2,
                fp: 2,
                fn_: 2
            }
        );
    }

    #[test]
    fn length_mismatch() {
        assert!(score_verdicts(&[Verdict::Yes], &[]).is_err());
    }
}
