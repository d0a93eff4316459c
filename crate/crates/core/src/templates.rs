//! Deterministic, bit-exact rendering of every prompt in the system.
//!
//! Rendering is a pure function of its inputs: identical inputs always
//! yield byte-identical output. Newline discipline: sections are
//! separated by exactly one blank line, one label per line, so rendered
//! prompts hash stably for the replay cache.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Hint, KnowledgeKind, Message, TaskSpec};

/// Knowledge-generation question for the context (summary) aid.
pub const CONTEXT_QUESTION: &str =
    "What is the summary of the following tweet in a disaster situation?";
/// Knowledge-generation question for the goal aid.
pub const GOAL_QUESTION: &str = "What is the goal of the user in the following tweet?";
/// Conclusion statement appended after the reasoning to trigger the
/// final answer completion.
pub const ANSWER_TRIGGER: &str = "Therefore, among the given categories, the answer is";
/// Self-Debias revision instruction, sent as a follow-up user turn.
pub const SELF_DEBIAS_REVISION: &str =
    "Remove bias from your answer by answering the question again with the category only";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("label order {order:?} is not a permutation of 0..{n}")]
    InvalidPermutation { order: Vec<usize>, n: usize },
}

/// An ordered list of role-tagged chat messages ready to send.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<Message>,
}

impl RenderedPrompt {
    pub fn single_user(content: String) -> Self {
        Self {
            messages: vec![Message::user(content)],
        }
    }
}

/// Renders the knowledge-generation prompt for a context or goal aid:
/// a single user message `Question: <q>\n\nTweet: <tweet>\n\nAnswer:`.
pub fn render_knowledge_prompt(
    kind: KnowledgeKind,
    tweet: &str,
) -> Result<RenderedPrompt, TemplateError> {
    if tweet.trim().is_empty() {
        return Err(TemplateError::EmptyInput("tweet"));
    }
    let question = match kind {
        KnowledgeKind::Context => CONTEXT_QUESTION,
        KnowledgeKind::Goal => GOAL_QUESTION,
    };
    Ok(RenderedPrompt::single_user(format!(
        "Question: {question}\n\nTweet: {tweet}\n\nAnswer:"
    )))
}

/// Renders the classification task prompt: question, one `<name>: <definition>`
/// line per label in `label_order`, the tweet, and (unless the strategy
/// carries no hint, as Self-Debias does) the hint statement with the
/// knowledge aid on its own line beneath it.
pub fn render_task_prompt(
    task: &TaskSpec,
    label_order: &[usize],
    tweet: &str,
    hint: Option<&Hint>,
) -> Result<RenderedPrompt, TemplateError> {
    validate_permutation(label_order, task.labels.len())?;
    if tweet.trim().is_empty() {
        return Err(TemplateError::EmptyInput("tweet"));
    }

    let mut out = String::new();
    out.push_str("Question: ");
    out.push_str(&task.question);
    out.push_str("\n\n");
    for (i, &idx) in label_order.iter().enumerate() {
        let label = &task.labels[idx];
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&label.name);
        out.push_str(": ");
        out.push_str(&label.definition);
    }
    out.push_str("\n\nTweet: ");
    out.push_str(tweet);
    if let Some(hint) = hint {
        out.push_str("\n\nHint: ");
        out.push_str(&hint.statement);
        if let Some(knowledge) = &hint.knowledge {
            out.push('\n');
            out.push_str(knowledge);
        }
    }
    Ok(RenderedPrompt::single_user(out))
}

/// Builds the assistant-turn content for the answer-prediction step: the
/// generated reasoning followed by the conclusion statement, which the
/// model is asked to complete.
pub fn render_answer_trigger(reasoning: &str) -> Result<String, TemplateError> {
    if reasoning.trim().is_empty() {
        return Err(TemplateError::EmptyInput("reasoning"));
    }
    Ok(format!("{reasoning}\n\n{ANSWER_TRIGGER}"))
}

/// The Self-Debias revision instruction, verbatim.
pub fn render_self_debias_revision() -> &'static str {
    SELF_DEBIAS_REVISION
}

fn validate_permutation(order: &[usize], n: usize) -> Result<(), TemplateError> {
    let mut seen = vec![false; n];
    let ok = order.len() == n
        && order.iter().all(|&i| {
            if i >= n || seen[i] {
                false
            } else {
                seen[i] = true;
                true
            }
        });
    if ok {
        Ok(())
    } else {
        Err(TemplateError::InvalidPermutation {
            order: order.to_vec(),
            n,
        })
    }
}
