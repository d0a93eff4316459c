//! Salience probe: asks a model, over paraphrased prompts and repeated
//! samples, which causality type matters more for a task, then tallies
//! the answers into a distribution.
//!
//! Responses are classified by word-boundary keyword rules:
//! "dispositional"/"personal" count toward the dispositional family,
//! "situational"/"impersonal" toward the situational family; both
//! families present means both; neither means unclassified. Word
//! boundaries keep "impersonal" from also matching "personal".

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{CompletionRequest, Gateway};
use crate::types::{GenerationParams, Message};

use super::EvalError;

/// Placeholder in a paraphrase that the task description replaces.
pub const TASK_PLACEHOLDER: &str = "{task}";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SalienceProbeConfig {
    pub task_description: String,
    /// Paraphrased probe prompts; each may contain `{task}`.
    pub paraphrases: Vec<String>,
    pub samples_per_prompt: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub base_seed: u64,
}

impl SalienceProbeConfig {
    /// Sampling defaults: temperature 0.7, top-p 0.9, 20 samples per prompt.
    pub fn new(task_description: impl Into<String>, paraphrases: Vec<String>) -> Self {
        Self {
            task_description: task_description.into(),
            paraphrases,
            samples_per_prompt: 20,
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 128,
            base_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.paraphrases.is_empty() {
            return Err(EvalError::InvalidPlan(
                "probe needs at least one paraphrase".into(),
            ));
        }
        if self.samples_per_prompt == 0 {
            return Err(EvalError::InvalidPlan(
                "probe needs at least one sample per prompt".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SalienceCategory {
    Dispositional,
    Situational,
    Both,
    Unclassified,
}

/// Normalized proportions over all probe responses, plus raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceDistribution {
    pub model_id: String,
    pub total: usize,
    pub counts: [usize; 4],
    /// (dispositional, situational, both, unclassified); sums to 1.
    pub proportions: [f64; 4],
    pub failures: usize,
}

/// Classifies one free-text probe response.
pub fn classify_salience_response(text: &str) -> SalienceCategory {
    // Compiling per call is fine at probe scale (hundreds of responses).
    let dispositional = Regex::new(r"(?i)\b(dispositional|personal)\b").unwrap();
    let situational = Regex::new(r"(?i)\b(situational|impersonal)\b").unwrap();
    match (dispositional.is_match(text), situational.is_match(text)) {
        (true, true) => SalienceCategory::Both,
        (true, false) => SalienceCategory::Dispositional,
        (false, true) => SalienceCategory::Situational,
        (false, false) => SalienceCategory::Unclassified,
    }
}

/// Issues paraphrases x samples completions and tallies categories. Each
/// sample gets a distinct derived seed so sampling-based decoding yields
/// independent responses (and distinct replay fixtures).
pub fn run_salience_probe(
    config: &SalienceProbeConfig,
    model_id: &str,
    gateway: &Gateway,
) -> Result<SalienceDistribution, EvalError> {
    config.validate()?;
    let mut counts = [0usize; 4];
    let mut failures = 0usize;
    for (i, paraphrase) in config.paraphrases.iter().enumerate() {
        let content = if paraphrase.contains(TASK_PLACEHOLDER) {
            paraphrase.replace(TASK_PLACEHOLDER, &config.task_description)
        } else {
            format!("{paraphrase}\n\nTask: {}", config.task_description)
        };
        for j in 0..config.samples_per_prompt {
            let seed = config.base_seed + (i * config.samples_per_prompt + j) as u64;
            let params = GenerationParams {
                model_id: model_id.to_string(),
                temperature: config.temperature,
                top_p: config.top_p,
                max_tokens: config.max_tokens,
                seed: Some(seed),
            };
            let req = CompletionRequest::new(params, vec![Message::user(content.clone())]);
            match gateway.complete(&req) {
                Ok(completion) => {
                    let category = classify_salience_response(&completion.content);
                    counts[category as usize] += 1;
                }
                Err(err) => {
                    log::warn!("probe sample {i}/{j} failed: {err}");
                    failures += 1;
                }
            }
        }
    }
    let total: usize = counts.iter().sum();
    let proportions = if total == 0 {
        [0.0; 4]
    } else {
        [
            counts[0] as f64 / total as f64,
            counts[1] as f64 / total as f64,
            counts[2] as f64 / total as f64,
            counts[3] as f64 / total as f64,
        ]
    };
    Ok(SalienceDistribution {
        model_id: model_id.to_string(),
        total,
        counts,
        proportions,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedTransport;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn keyword_families() {
        assert_eq!(
            classify_salience_response("Dispositional causality matters most."),
            SalienceCategory::Dispositional
        );
        assert_eq!(
            classify_salience_response("the situational factors dominate"),
            SalienceCategory::Situational
        );
        assert_eq!(
            classify_salience_response("Both dispositional and situational factors matter"),
            SalienceCategory::Both
        );
        assert_eq!(
            classify_salience_response("personal desire drives it"),
            SalienceCategory::Dispositional
        );
        assert_eq!(
            classify_salience_response("impersonal, environmental events"),
            SalienceCategory::Situational
        );
        assert_eq!(
            classify_salience_response("no idea"),
            SalienceCategory::Unclassified
        );
    }

    #[test]
    fn impersonal_does_not_trigger_personal() {
        // "impersonal" contains "personal"; only the situational family fires.
        assert_eq!(
            classify_salience_response("It is impersonal."),
            SalienceCategory::Situational
        );
    }

    #[test]
    fn probe_distribution_counts() {
        // 10 paraphrases x 20 samples = 200 responses: 160 dispositional,
        // 40 situational, scripted round-robin per request index.
        let counter = AtomicUsize::new(0);
        let gateway = Gateway::live(ScriptedTransport::new(move |_| {
            let i = counter.fetch_add(1, Ordering::SeqCst);
            Ok(if i.is_multiple_of(5) {
                "situational causality".to_string()
            } else {
                "dispositional causality".to_string()
            })
        }));
        let config = SalienceProbeConfig::new(
            "intent detection",
            (0..10)
                .map(|i| format!("paraphrase {i}: {{task}}"))
                .collect(),
        );
        let dist = run_salience_probe(&config, "m", &gateway).unwrap();
        assert_eq!(dist.total, 200);
        assert_eq!(dist.counts, [160, 40, 0, 0]);
        assert_eq!(dist.proportions, [0.8, 0.2, 0.0, 0.0]);
        let sum: f64 = dist.proportions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_requests_are_distinct_per_sample() {
        // Every sample carries a distinct derived seed, so all 40 request
        // hashes differ and replay can script each response independently.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.jsonl");
        let gateway = Gateway::record(ScriptedTransport::new(|_| Ok("x".into())), &path).unwrap();
        let config =
            SalienceProbeConfig::new("t", (0..2).map(|i| format!("p{i} {{task}}")).collect());
        run_salience_probe(&config, "m", &gateway).unwrap();
        assert_eq!(gateway.counters().completions_served, 40);
        assert_eq!(gateway.counters().store_hits, 0);
        let store = crate::gateway::FixtureStore::open(&path).unwrap();
        assert_eq!(store.len(), 40);
    }

    #[test]
    fn empty_paraphrases_rejected() {
        let config = SalienceProbeConfig::new("t", vec![]);
        assert!(config.validate().is_err());
    }
}
