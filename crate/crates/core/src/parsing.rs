//! Extracts a predicted label from free-text LLM answers.
//!
//! Matching is case-insensitive; multi-word label names match as whole
//! phrases with flexible internal whitespace. When several labels occur,
//! the one whose first occurrence is earliest wins; ties at the same
//! position go to the longest match. Binary tasks match `yes`/`no` as
//! word-boundary tokens only, so "yesterday" never counts.

use regex::Regex;

use crate::types::{Prediction, TaskSpec};

/// Compiled matchers for one task's label set. Build once, reuse across
/// answers; construction is the expensive part.
#[derive(Debug)]
pub struct LabelMatcher {
    patterns: Vec<(String, Regex)>,
}

impl LabelMatcher {
    pub fn new(task: &TaskSpec) -> Self {
        let patterns = task
            .labels
            .iter()
            .map(|label| {
                let pattern = if task.binary_mode {
                    format!(r"(?i)\b{}\b", regex::escape(&label.name))
                } else {
                    phrase_pattern(&label.name)
                };
                let re = Regex::new(&pattern).expect("label pattern must compile");
                (label.name.clone(), re)
            })
            .collect();
        Self { patterns }
    }

    /// Scans the answer for label occurrences. Earliest first occurrence
    /// wins; ties at the same offset resolve to the longest match, then
    /// to task label order. No occurrence at all yields `Unparsed`.
    pub fn extract(&self, answer: &str) -> Prediction {
        let mut best: Option<(usize, usize, &str)> = None; // (start, len, name)
        for (name, re) in &self.patterns {
            if let Some(m) = re.find(answer) {
                let candidate = (m.start(), m.len(), name.as_str());
                best = Some(match best {
                    None => candidate,
                    Some(current) => {
                        // Earlier start wins; same start: longer match wins.
                        if candidate.0 < current.0
                            || (candidate.0 == current.0 && candidate.1 > current.1)
                        {
                            candidate
                        } else {
                            current
                        }
                    }
                });
            }
        }
        match best {
            Some((_, _, name)) => Prediction::Label(name.to_string()),
            None => Prediction::Unparsed,
        }
    }
}

/// Case-insensitive whole-phrase pattern: tokens separated by any run of
/// whitespace.
fn phrase_pattern(name: &str) -> String {
    let tokens: Vec<String> = name.split_whitespace().map(regex::escape).collect();
    format!("(?i){}", tokens.join(r"\s+"))
}

/// One-shot convenience wrapper around [`LabelMatcher`].
pub fn extract_label(answer: &str, task: &TaskSpec) -> Prediction {
    LabelMatcher::new(task).extract(answer)
}
