//! Pipeline execution: one example through one strategy, producing a
//! transcript of every prompt and completion.
//!
//! Zero-CoT and Self-Debias are two-call pipelines. The knowledge
//! strategies prepend a knowledge-generation call whose output is
//! injected into the task prompt's hint, giving three calls. The
//! conversation grows monotonically: each call's message list strictly
//! prefix-extends the previous call's.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::parsing::LabelMatcher;
use crate::templates::{
    self, render_knowledge_prompt, render_self_debias_revision, render_task_prompt, TemplateError,
    ANSWER_TRIGGER,
};
use crate::types::{
    CallRecord, Example, GenerationParams, Hint, Message, PipelineTranscript, StrategyKind,
    TaskSpec,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("knowledge generation returned only whitespace for example `{example_id}`")]
    KnowledgeEmpty { example_id: String },
}

/// A pipeline failure together with the partial transcript recorded up to
/// the failing call. Failures never abort a dataset run; the orchestrator
/// persists the partial transcript and counts the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct FailedPipeline {
    pub error: PipelineError,
    pub transcript: Box<PipelineTranscript>,
}

type PipelineResult = Result<PipelineTranscript, Box<FailedPipeline>>;

/// Per-stage generation parameters for one pipeline run. In cross-model
/// runs the knowledge stage carries a different model id than the
/// reasoning and answer stages.
#[derive(Debug, Clone)]
pub struct StageParams {
    pub knowledge: GenerationParams,
    pub reasoning: GenerationParams,
    pub answer: GenerationParams,
}

impl StageParams {
    /// Same model and decoding settings for every stage, with the usual
    /// per-stage token budgets.
    pub fn uniform(params: &GenerationParams) -> Self {
        Self {
            knowledge: params.clone().with_max_tokens(512),
            reasoning: params.clone().with_max_tokens(512),
            answer: params.clone().with_max_tokens(32),
        }
    }
}

/// Cache of generated knowledge, keyed independently of label order so
/// permutation sweeps reuse one generation per example. First writer
/// wins; concurrent misses on the same key collapse to one generation.
#[derive(Default)]
pub struct KnowledgeCache {
    slots: Mutex<HashMap<String, Arc<Mutex<Option<String>>>>>,
}

impl KnowledgeCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached knowledge for `key`, or runs `generate` while
    /// holding the per-key slot so racing callers wait instead of
    /// generating twice. The flag is true when served from cache.
    pub fn get_or_generate<E>(
        &self,
        key: &str,
        generate: impl FnOnce() -> Result<String, E>,
    ) -> Result<(String, bool), E> {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            slots
                .entry(key.to_string())
                .or_insert_with(|| Arc::new(Mutex::new(None)))
                .clone()
        };
        let mut value = slot.lock().unwrap();
        if let Some(cached) = value.as_ref() {
            return Ok((cached.clone(), true));
        }
        let generated = generate()?;
        *value = Some(generated.clone());
        Ok((generated, false))
    }
}

/// Cache key for one example's knowledge aid: independent of label order,
/// distinct per strategy, model and knowledge-stage decoding parameters.
pub fn knowledge_cache_key(
    strategy: StrategyKind,
    example_id: &str,
    knowledge_params: &GenerationParams,
) -> String {
    let kind = match strategy.knowledge_kind() {
        Some(k) => format!("{k:?}"),
        None => "none".to_string(),
    };
    format!(
        "{kind}|{example_id}|{}|t={:?}|p={:?}|mt={}|s={:?}",
        knowledge_params.model_id,
        knowledge_params.temperature,
        knowledge_params.top_p,
        knowledge_params.max_tokens,
        knowledge_params.effective_seed(),
    )
}

/// Everything a pipeline run needs besides the example itself.
pub struct PipelineContext<'a> {
    pub gateway: &'a Gateway,
    pub cache: &'a KnowledgeCache,
    pub stages: StageParams,
}

/// Runs one example through one strategy.
pub fn run_pipeline(
    strategy: StrategyKind,
    task: &TaskSpec,
    example: &Example,
    label_order: &[usize],
    ctx: &PipelineContext<'_>,
) -> PipelineResult {
    match strategy {
        StrategyKind::ZeroCot => run_zero_cot(task, example, label_order, ctx),
        StrategyKind::SelfDebias => run_self_debias(task, example, label_order, ctx),
        StrategyKind::ContextBased | StrategyKind::GoalBased => {
            run_knowledge_pipeline(strategy, task, example, label_order, ctx)
        }
    }
}

fn new_transcript(
    strategy: StrategyKind,
    task: &TaskSpec,
    example: &Example,
    ctx: &PipelineContext<'_>,
) -> PipelineTranscript {
    PipelineTranscript {
        example_id: example.id.clone(),
        example_text: example.text.clone(),
        gold_label: example.gold.clone(),
        task_id: task.task_id.clone(),
        dataset_id: String::new(),
        language: example.language.clone(),
        model_id: ctx.stages.reasoning.model_id.clone(),
        strategy,
        permutation_index: 0,
        repetition: 0,
        temperature: ctx.stages.reasoning.temperature,
        calls: Vec::new(),
        knowledge_text: None,
        knowledge_cached: false,
        reasoning_text: String::new(),
        final_answer_text: String::new(),
        prediction: crate::types::Prediction::Unparsed,
        warnings: Vec::new(),
        error: None,
    }
}

fn fail(mut transcript: PipelineTranscript, error: PipelineError) -> Box<FailedPipeline> {
    transcript.error = Some(error.to_string());
    Box::new(FailedPipeline {
        error,
        transcript: Box::new(transcript),
    })
}

fn issue_call(
    transcript: &mut PipelineTranscript,
    gateway: &Gateway,
    params: &GenerationParams,
    messages: Vec<Message>,
) -> Result<String, PipelineError> {
    let req = CompletionRequest::new(params.clone(), messages.clone());
    let (completion, latency_ms) = gateway.complete_timed(&req)?;
    transcript.calls.push(CallRecord {
        model_id: params.model_id.clone(),
        messages,
        completion: completion.content.clone(),
        cached: false,
        latency_ms,
        prompt_tokens: completion.prompt_tokens,
        completion_tokens: completion.completion_tokens,
    });
    Ok(completion.content)
}

/// Assistant-turn content for the answer step. Empty reasoning is allowed
/// here (flagged upstream as a warning); the trigger stands alone then.
fn answer_turn_content(reasoning: &str) -> String {
    if reasoning.trim().is_empty() {
        ANSWER_TRIGGER.to_string()
    } else {
        templates::render_answer_trigger(reasoning).expect("non-empty reasoning renders")
    }
}

/// Shared reasoning-then-answer tail: extends `conversation` with the task
/// prompt, obtains the reasoning, appends it with the answer trigger, and
/// parses the final answer.
fn reason_and_answer(
    transcript: &mut PipelineTranscript,
    conversation: Vec<Message>,
    task: &TaskSpec,
    example: &Example,
    label_order: &[usize],
    hint: Option<&Hint>,
    ctx: &PipelineContext<'_>,
) -> Result<(), PipelineError> {
    let task_prompt = render_task_prompt(task, label_order, &example.text, hint)?;
    let mut messages = conversation;
    messages.extend(task_prompt.messages);

    let reasoning = issue_call(
        transcript,
        ctx.gateway,
        &ctx.stages.reasoning,
        messages.clone(),
    )?;
    if reasoning.trim().is_empty() {
        transcript
            .warnings
            .push("reasoning step returned an empty completion".into());
    }
    transcript.reasoning_text = reasoning.clone();

    messages.push(Message::assistant(answer_turn_content(&reasoning)));
    let answer = issue_call(transcript, ctx.gateway, &ctx.stages.answer, messages)?;
    transcript.final_answer_text = answer.clone();
    transcript.prediction = LabelMatcher::new(task).extract(&answer);
    Ok(())
}

/// Two-step Zero-CoT baseline: task prompt with the step-by-step hint,
/// then the answer trigger.
pub fn run_zero_cot(
    task: &TaskSpec,
    example: &Example,
    label_order: &[usize],
    ctx: &PipelineContext<'_>,
) -> PipelineResult {
    let mut transcript = new_transcript(StrategyKind::ZeroCot, task, example, ctx);
    let hint = Hint::zero_cot();
    match reason_and_answer(
        &mut transcript,
        Vec::new(),
        task,
        example,
        label_order,
        Some(&hint),
        ctx,
    ) {
        Ok(()) => Ok(transcript),
        Err(e) => Err(fail(transcript, e)),
    }
}

/// Self-Debias baseline: hint-free task prompt, then the revision
/// instruction as a follow-up user turn. The prediction is parsed from
/// the revised answer only.
pub fn run_self_debias(
    task: &TaskSpec,
    example: &Example,
    label_order: &[usize],
    ctx: &PipelineContext<'_>,
) -> PipelineResult {
    let mut transcript = new_transcript(StrategyKind::SelfDebias, task, example, ctx);
    match self_debias_inner(&mut transcript, task, example, label_order, ctx) {
        Ok(()) => Ok(transcript),
        Err(e) => Err(fail(transcript, e)),
    }
}

fn self_debias_inner(
    transcript: &mut PipelineTranscript,
    task: &TaskSpec,
    example: &Example,
    label_order: &[usize],
    ctx: &PipelineContext<'_>,
) -> Result<(), PipelineError> {
    let task_prompt = render_task_prompt(task, label_order, &example.text, None)?;
    let mut messages = task_prompt.messages;

    let initial = issue_call(
        transcript,
        ctx.gateway,
        &ctx.stages.reasoning,
        messages.clone(),
    )?;
    transcript.reasoning_text = initial.clone();

    messages.push(Message::assistant(initial));
    messages.push(Message::user(render_self_debias_revision()));
    let revised = issue_call(transcript, ctx.gateway, &ctx.stages.answer, messages)?;
    transcript.final_answer_text = revised.clone();
    transcript.prediction = LabelMatcher::new(task).extract(&revised);
    Ok(())
}

/// Three-step knowledge pipeline: generate the context or goal aid, then
/// reason over the task prompt with the aid under the hint, then answer.
/// The knowledge step is served from the cache when a previous
/// permutation already generated it.
pub fn run_knowledge_pipeline(
    strategy: StrategyKind,
    task: &TaskSpec,
    example: &Example,
    label_order: &[usize],
    ctx: &PipelineContext<'_>,
) -> PipelineResult {
    let mut transcript = new_transcript(strategy, task, example, ctx);
    match knowledge_inner(strategy, &mut transcript, task, example, label_order, ctx) {
        Ok(()) => Ok(transcript),
        Err(e) => Err(fail(transcript, e)),
    }
}

fn knowledge_inner(
    strategy: StrategyKind,
    transcript: &mut PipelineTranscript,
    task: &TaskSpec,
    example: &Example,
    label_order: &[usize],
    ctx: &PipelineContext<'_>,
) -> Result<(), PipelineError> {
    let kind = strategy
        .knowledge_kind()
        .expect("knowledge pipeline requires a knowledge strategy");

    let knowledge_prompt = render_knowledge_prompt(kind, &example.text)?;
    let key = knowledge_cache_key(strategy, &example.id, &ctx.stages.knowledge);
    let request = CompletionRequest::new(
        ctx.stages.knowledge.clone(),
        knowledge_prompt.messages.clone(),
    );
    let gateway = ctx.gateway;
    let mut latency_ms = 0u64;
    let (knowledge, cached) = ctx.cache.get_or_generate(&key, || {
        gateway
            .complete_timed(&request)
            .map(|(completion, latency)| {
                latency_ms = latency;
                completion.content
            })
    })?;
    transcript.calls.push(CallRecord {
        model_id: ctx.stages.knowledge.model_id.clone(),
        messages: knowledge_prompt.messages.clone(),
        completion: knowledge.clone(),
        cached,
        latency_ms,
        prompt_tokens: None,
        completion_tokens: None,
    });
    if knowledge.trim().is_empty() {
        return Err(PipelineError::KnowledgeEmpty {
            example_id: example.id.clone(),
        });
    }
    transcript.knowledge_text = Some(knowledge.clone());
    transcript.knowledge_cached = cached;

    let mut conversation = knowledge_prompt.messages;
    conversation.push(Message::assistant(knowledge.clone()));

    let hint = Hint::for_strategy(strategy, Some(knowledge))
        .expect("knowledge strategies always carry a hint");
    reason_and_answer(
        transcript,
        conversation,
        task,
        example,
        label_order,
        Some(&hint),
        ctx,
    )
}
