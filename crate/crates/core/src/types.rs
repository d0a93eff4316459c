//! Domain types shared by every module: tasks, labels, examples,
//! strategies, hints, generation parameters and pipeline transcripts.
//!
//! All types here are immutable value objects with no I/O; they are safe
//! to share across concurrent workers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hint statement used by the Zero-CoT strategy.
pub const ZERO_COT_HINT: &str = "Let's think step by step";
/// Hint statement used by the goal-based strategy.
pub const GOAL_HINT: &str = "Let's think step by step about the user's goal";
/// Hint statement used by the context-based strategy.
pub const CONTEXT_HINT: &str = "Let's think step by step about the summary of the tweet";

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid task `{task_id}`: {reason}")]
    InvalidTask { task_id: String, reason: String },
    #[error("invalid example `{id}`: {reason}")]
    InvalidExample { id: String, reason: String },
    #[error("`{raw}` does not match any label of task `{task_id}`")]
    NoMatch { raw: String, task_id: String },
    #[error("`{raw}` matches more than one label of task `{task_id}`: {candidates:?}")]
    Ambiguous {
        raw: String,
        task_id: String,
        candidates: Vec<String>,
    },
}

/// One answer option: the verbatim label string as rendered in prompts,
/// plus its definition text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDef {
    pub name: String,
    #[serde(default)]
    pub definition: String,
}

impl LabelDef {
    pub fn new(name: impl Into<String>, definition: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            definition: definition.into(),
        }
    }
}

/// A classification task: the question shown to the model and the ordered
/// label set it must choose from.
///
/// Label names are stored verbatim (prompts must be bit-stable); matching
/// against model output is case-insensitive elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub question: String,
    pub labels: Vec<LabelDef>,
    /// Binary tasks use a Yes/No answer space instead of label names.
    #[serde(default)]
    pub binary_mode: bool,
    /// Label definitions may be empty only when this is set.
    #[serde(default)]
    pub allow_empty_definitions: bool,
}

/// Case-folds and collapses internal whitespace; the canonical key used
/// for label uniqueness and label matching.
pub(crate) fn fold_key(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl TaskSpec {
    pub fn new(
        task_id: impl Into<String>,
        question: impl Into<String>,
        labels: Vec<LabelDef>,
    ) -> Result<Self, CoreError> {
        let spec = Self {
            task_id: task_id.into(),
            question: question.into(),
            labels,
            binary_mode: false,
            allow_empty_definitions: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let invalid = |reason: String| CoreError::InvalidTask {
            task_id: self.task_id.clone(),
            reason,
        };
        if self.labels.len() < 2 {
            return Err(invalid(format!(
                "needs at least 2 labels, got {}",
                self.labels.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for label in &self.labels {
            if label.name.trim().is_empty() {
                return Err(invalid("label with empty name".into()));
            }
            if label.definition.trim().is_empty() && !self.allow_empty_definitions {
                return Err(invalid(format!("label `{}` has no definition", label.name)));
            }
            if !seen.insert(fold_key(&label.name)) {
                return Err(invalid(format!(
                    "duplicate label `{}` (names must be unique after case-folding)",
                    label.name
                )));
            }
        }
        if self.binary_mode {
            let names: Vec<&str> = self.labels.iter().map(|l| l.name.as_str()).collect();
            if names != ["Yes", "No"] {
                return Err(invalid(format!(
                    "binary mode requires exactly the labels [Yes, No], got {names:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }
}

/// Resolves a raw label string against the task's label set.
///
/// Matching is case-insensitive with whitespace collapsed; the returned
/// name is the canonical (verbatim) form from the task.
pub fn normalize_label(raw: &str, task: &TaskSpec) -> Result<String, CoreError> {
    let key = fold_key(raw);
    let matches: Vec<&LabelDef> = task
        .labels
        .iter()
        .filter(|l| fold_key(&l.name) == key)
        .collect();
    match matches.len() {
        0 => Err(CoreError::NoMatch {
            raw: raw.to_string(),
            task_id: task.task_id.clone(),
        }),
        1 => Ok(matches[0].name.clone()),
        _ => Err(CoreError::Ambiguous {
            raw: raw.to_string(),
            task_id: task.task_id.clone(),
            candidates: matches.iter().map(|l| l.name.clone()).collect(),
        }),
    }
}

/// One input message to classify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    /// Gold label; must resolve to exactly one label of the task.
    pub gold: String,
    /// BCP-47-style language tag, e.g. "en", "ht", "es".
    #[serde(default)]
    pub language: String,
    /// Free-text event tag, e.g. the disaster the message belongs to.
    #[serde(default)]
    pub event: String,
}

impl Example {
    pub fn validate(&self, task: &TaskSpec) -> Result<(), CoreError> {
        if self.text.trim().is_empty() {
            return Err(CoreError::InvalidExample {
                id: self.id.clone(),
                reason: "text is empty after trimming".into(),
            });
        }
        normalize_label(&self.gold, task).map_err(|_| CoreError::InvalidExample {
            id: self.id.clone(),
            reason: format!("gold label `{}` not in task `{}`", self.gold, task.task_id),
        })?;
        Ok(())
    }
}

/// The knowledge kind a strategy generates before reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnowledgeKind {
    /// A summary of the message (situational causality).
    Context,
    /// The user's goal in writing the message (dispositional causality).
    Goal,
}

/// Prompting strategy for one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    ZeroCot,
    SelfDebias,
    ContextBased,
    GoalBased,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::ZeroCot,
        StrategyKind::SelfDebias,
        StrategyKind::ContextBased,
        StrategyKind::GoalBased,
    ];

    /// Context-based and goal-based strategies prepend a knowledge
    /// generation step; the baselines do not.
    pub fn knowledge_kind(&self) -> Option<KnowledgeKind> {
        match self {
            StrategyKind::ContextBased => Some(KnowledgeKind::Context),
            StrategyKind::GoalBased => Some(KnowledgeKind::Goal),
            StrategyKind::ZeroCot | StrategyKind::SelfDebias => None,
        }
    }

    pub fn has_knowledge_step(&self) -> bool {
        self.knowledge_kind().is_some()
    }

    /// LLM interactions per transcript (issued or cache-served).
    pub fn calls_per_example(&self) -> usize {
        if self.has_knowledge_step() {
            3
        } else {
            2
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::ZeroCot => "zero-cot",
            StrategyKind::SelfDebias => "self-debias",
            StrategyKind::ContextBased => "context-based",
            StrategyKind::GoalBased => "goal-based",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match fold_key(s).as_str() {
            "zero-cot" | "zerocot" => Ok(StrategyKind::ZeroCot),
            "self-debias" | "selfdebias" => Ok(StrategyKind::SelfDebias),
            "context-based" | "contextbased" => Ok(StrategyKind::ContextBased),
            "goal-based" | "goalbased" => Ok(StrategyKind::GoalBased),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// The hint block rendered at the bottom of a task prompt: the strategy's
/// fixed statement plus, for knowledge strategies, the generated aid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hint {
    pub statement: String,
    pub knowledge: Option<String>,
}

impl Hint {
    pub fn zero_cot() -> Self {
        Self {
            statement: ZERO_COT_HINT.to_string(),
            knowledge: None,
        }
    }

    /// Builds the hint for a strategy. Returns `None` for Self-Debias,
    /// which renders the task prompt with no hint section at all.
    pub fn for_strategy(strategy: StrategyKind, knowledge: Option<String>) -> Option<Self> {
        match strategy {
            StrategyKind::ZeroCot => Some(Self::zero_cot()),
            StrategyKind::SelfDebias => None,
            StrategyKind::GoalBased => Some(Self {
                statement: GOAL_HINT.to_string(),
                knowledge,
            }),
            StrategyKind::ContextBased => Some(Self {
                statement: CONTEXT_HINT.to_string(),
                knowledge,
            }),
        }
    }
}

/// Decoding parameters for one completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl GenerationParams {
    pub fn deterministic(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 512,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.model_id.trim().is_empty() {
            return Err("model_id is empty".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            ));
        }
        if self.top_p.is_nan() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }

    /// Temperature zero means deterministic intent: the seed is ignored.
    pub fn effective_seed(&self) -> Option<u64> {
        if self.temperature == 0.0 {
            None
        } else {
            self.seed
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

/// Chat message role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One role-tagged chat message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Outcome of parsing a final answer. `Unparsed` is a value, never an
/// error, and is never silently mapped to a class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Label(String),
    Unparsed,
}

impl Prediction {
    pub fn label(&self) -> Option<&str> {
        match self {
            Prediction::Label(l) => Some(l),
            Prediction::Unparsed => None,
        }
    }

    pub fn is_unparsed(&self) -> bool {
        matches!(self, Prediction::Unparsed)
    }
}

/// One LLM interaction inside a transcript. A cache-served knowledge step
/// still appears here with `cached = true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub completion: String,
    #[serde(default)]
    pub cached: bool,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

/// Ordered record of every prompt sent and completion received for one
/// (example, permutation) pipeline run, plus the parsed prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTranscript {
    pub example_id: String,
    pub example_text: String,
    pub gold_label: String,
    pub task_id: String,
    pub dataset_id: String,
    #[serde(default)]
    pub language: String,
    pub model_id: String,
    pub strategy: StrategyKind,
    pub permutation_index: usize,
    #[serde(default)]
    pub repetition: usize,
    #[serde(default)]
    pub temperature: f64,
    pub calls: Vec<CallRecord>,
    pub knowledge_text: Option<String>,
    #[serde(default)]
    pub knowledge_cached: bool,
    pub reasoning_text: String,
    pub final_answer_text: String,
    pub prediction: Prediction,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Set when the pipeline failed partway; the transcript is partial.
    #[serde(default)]
    pub error: Option<String>,
}
