//! Experiment orchestration: the permutation-averaged protocol,
//! temperature and cross-model ablations, the salience probe, and
//! human-evaluation sampling.
//!
//! The orchestrator fans example-level pipeline runs out to a bounded
//! worker pool; aggregation happens after a deterministic sort, so report
//! content never depends on completion order.

pub mod human_eval;
pub mod permutations;
pub mod salience;

pub use human_eval::{export_human_eval, import_human_eval, AnnotationRow, HumanEvalSummary};
pub use permutations::{enumerate_permutations, PermutationPolicy};
pub use salience::{run_salience_probe, SalienceDistribution, SalienceProbeConfig};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CallCounters, Gateway, GatewayError};
use crate::ingest::{load_dataset_with_stats, DatasetManifest, IngestError, LoadStats};
use crate::metrics::{macro_f1, mean_std, LabelMetrics, MetricsError};
use crate::pipelines::{run_pipeline, KnowledgeCache, PipelineContext, StageParams};
use crate::types::{Example, GenerationParams, PipelineTranscript, StrategyKind, TaskSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
    #[error("exhaustive permutation of {n_labels} labels needs {total} runs, cap is {cap}; use sampling")]
    CapExceeded {
        n_labels: usize,
        total: usize,
        cap: usize,
    },
    #[error("dataset `{0}` references unknown task `{1}`")]
    UnknownTask(String, String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {reason}")]
    OutputIo { path: PathBuf, reason: String },
    #[error("not enough samples for human evaluation: {details}")]
    InsufficientSamples { details: String },
    #[error("missing annotations on rows: {}", row_ids.join(", "))]
    MissingAnnotation { row_ids: Vec<String> },
    #[error("invalid annotation file: {0}")]
    InvalidAnnotation(String),
}

/// Shared decoding defaults for every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDefaults {
    pub top_p: f64,
    pub max_tokens_knowledge: u32,
    pub max_tokens_reasoning: u32,
    pub max_tokens_answer: u32,
}

impl Default for GenDefaults {
    fn default() -> Self {
        Self {
            top_p: 1.0,
            max_tokens_knowledge: 512,
            max_tokens_reasoning: 512,
            max_tokens_answer: 32,
        }
    }
}

/// Knowledge generated by a different model than the one reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossModelSpec {
    pub knowledge_model: String,
    pub reasoning_model: String,
}

/// Everything one experiment needs, declaratively.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub models: Vec<String>,
    pub tasks: Vec<TaskSpec>,
    pub datasets: Vec<DatasetManifest>,
    pub strategies: Vec<StrategyKind>,
    pub permutations: PermutationPolicy,
    pub repetitions: usize,
    pub temperatures: Vec<f64>,
    #[serde(default)]
    pub cross_model: Option<CrossModelSpec>,
    pub base_seed: u64,
    pub max_concurrency: usize,
    #[serde(default)]
    pub gen: GenDefaults,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.models.is_empty() {
            return Err(EvalError::InvalidPlan("no models configured".into()));
        }
        if self.strategies.is_empty() {
            return Err(EvalError::InvalidPlan("no strategies configured".into()));
        }
        if self.datasets.is_empty() {
            return Err(EvalError::InvalidPlan("no datasets configured".into()));
        }
        if self.repetitions == 0 {
            return Err(EvalError::InvalidPlan("repetitions must be >= 1".into()));
        }
        if self.temperatures.is_empty() {
            return Err(EvalError::InvalidPlan(
                "temperatures must be non-empty".into(),
            ));
        }
        if let Some(t) = self.temperatures.iter().find(|t| t.is_nan() || **t < 0.0) {
            return Err(EvalError::InvalidPlan(format!(
                "temperature must be a non-negative number, got {t}"
            )));
        }
        for task in &self.tasks {
            task.validate()
                .map_err(|e| EvalError::InvalidPlan(e.to_string()))?;
            // Surface the permutation cap at plan time, not mid-run.
            enumerate_permutations(task.labels.len(), &self.permutations)?;
        }
        for manifest in &self.datasets {
            self.task(&manifest.task_id).ok_or_else(|| {
                EvalError::UnknownTask(manifest.dataset_id.clone(), manifest.task_id.clone())
            })?;
        }
        Ok(())
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// A sweep over several temperatures is a temperature ablation; the
    /// knowledge stage is then pinned to temperature 0 so the ablation
    /// isolates the reasoning and answer stages.
    pub fn is_temperature_ablation(&self) -> bool {
        self.temperatures.len() > 1
    }
}

/// One dataset loaded and bound to its task, with the permutations the
/// protocol will run.
pub struct PreparedDataset {
    pub manifest: DatasetManifest,
    pub task: TaskSpec,
    pub examples: Vec<Example>,
    pub stats: LoadStats,
    pub permutations: Vec<Vec<usize>>,
}

/// Loads and validates every dataset in the plan.
pub fn prepare_datasets(plan: &ExperimentPlan) -> Result<Vec<PreparedDataset>, EvalError> {
    plan.validate()?;
    let mut prepared = Vec::new();
    for manifest in &plan.datasets {
        let task = plan
            .task(&manifest.task_id)
            .expect("validated above")
            .clone();
        let (examples, stats) = load_dataset_with_stats(manifest)?;
        for example in &examples {
            example
                .validate(&task)
                .map_err(|e| EvalError::InvalidPlan(e.to_string()))?;
        }
        let permutations = enumerate_permutations(task.labels.len(), &plan.permutations)?;
        prepared.push(PreparedDataset {
            manifest: manifest.clone(),
            task,
            examples,
            stats,
            permutations,
        });
    }
    Ok(prepared)
}

/// Which model produced the knowledge aid relative to the reasoner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeSource {
    SelfModel,
    CrossModel,
}

impl KnowledgeSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            KnowledgeSource::SelfModel => "self",
            KnowledgeSource::CrossModel => "cross",
        }
    }
}

/// Axis the reported mean/std varies over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariedAxis {
    Permutations,
    Repetitions,
}

/// Macro-F1 of one (repetition, permutation) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub repetition: usize,
    pub permutation_index: usize,
    pub macro_f1: f64,
}

/// Aggregated result for one (model, task, dataset, strategy, temperature)
/// cell. Every reported figure is recomputable from `run_scores`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub knowledge_model_id: String,
    pub setting: KnowledgeSource,
    pub task_id: String,
    pub dataset_id: String,
    pub language: String,
    pub strategy: StrategyKind,
    pub temperature: f64,
    pub axis: VariedAxis,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub run_scores: Vec<RunScore>,
    pub per_label: BTreeMap<String, LabelMetrics>,
    pub examples: usize,
    pub scored: usize,
    pub unparsed: usize,
    pub unparsed_rate: f64,
    pub failures: usize,
    pub calls: CallCounters,
}

impl EvalReport {
    /// Stable ordering key for deterministic report files.
    pub fn sort_key(&self) -> (String, String, String, &'static str, String, &'static str) {
        (
            self.model_id.clone(),
            self.task_id.clone(),
            self.dataset_id.clone(),
            self.strategy.as_str(),
            format!("{:.6}", self.temperature),
            self.setting.as_str(),
        )
    }
}

struct ModelAssignment {
    reasoning_model: String,
    knowledge_model: String,
    setting: KnowledgeSource,
}

/// Stage parameters for one (temperature, repetition) cell. Repetition
/// seeds derive from the base seed so reruns are auditable; at
/// temperature 0 the seed is ignored entirely.
fn stage_params(
    plan: &ExperimentPlan,
    assignment: &ModelAssignment,
    temperature: f64,
    repetition: usize,
) -> StageParams {
    let seed = if temperature > 0.0 {
        Some(plan.base_seed + repetition as u64)
    } else {
        None
    };
    let reasoning = GenerationParams {
        model_id: assignment.reasoning_model.clone(),
        temperature,
        top_p: plan.gen.top_p,
        max_tokens: plan.gen.max_tokens_reasoning,
        seed,
    };
    let answer = GenerationParams {
        max_tokens: plan.gen.max_tokens_answer,
        ..reasoning.clone()
    };
    let knowledge_temperature = if plan.is_temperature_ablation() {
        0.0
    } else {
        temperature
    };
    let knowledge = GenerationParams {
        model_id: assignment.knowledge_model.clone(),
        temperature: knowledge_temperature,
        top_p: plan.gen.top_p,
        max_tokens: plan.gen.max_tokens_knowledge,
        seed: if knowledge_temperature > 0.0 {
            seed
        } else {
            None
        },
    };
    StageParams {
        knowledge,
        reasoning,
        answer,
    }
}

/// Runs the full experiment matrix: every (model, dataset, strategy,
/// temperature, repetition, permutation, example) combination. Transcripts
/// are persisted under `out_dir/transcripts`; reports are returned sorted.
pub fn run_experiment(
    plan: &ExperimentPlan,
    gateway: &Gateway,
    out_dir: &Path,
) -> Result<Vec<EvalReport>, EvalError> {
    let datasets = prepare_datasets(plan)?;
    let assignments: Vec<ModelAssignment> = plan
        .models
        .iter()
        .map(|m| ModelAssignment {
            reasoning_model: m.clone(),
            knowledge_model: m.clone(),
            setting: KnowledgeSource::SelfModel,
        })
        .collect();
    run_matrix(
        plan,
        gateway,
        out_dir,
        &datasets,
        &assignments,
        &plan.strategies,
    )
}

/// Cross-model ablation: the knowledge stage runs on a different model
/// than reasoning and answering. Only knowledge strategies participate.
/// Identical model ids degenerate to a Self-labeled run with a warning.
pub fn run_cross_model(
    plan: &ExperimentPlan,
    gateway: &Gateway,
    out_dir: &Path,
) -> Result<Vec<EvalReport>, EvalError> {
    let cross = plan
        .cross_model
        .as_ref()
        .ok_or_else(|| EvalError::InvalidPlan("cross_model is not configured".into()))?;
    let strategies: Vec<StrategyKind> = plan
        .strategies
        .iter()
        .copied()
        .filter(|s| s.has_knowledge_step())
        .collect();
    if strategies.is_empty() {
        return Err(EvalError::InvalidPlan(
            "cross-model runs need a knowledge strategy (context-based or goal-based)".into(),
        ));
    }
    let setting = if cross.knowledge_model == cross.reasoning_model {
        log::warn!(
            "cross_model uses the same model `{}` for both stages; labeling the run Self",
            cross.reasoning_model
        );
        KnowledgeSource::SelfModel
    } else {
        KnowledgeSource::CrossModel
    };
    let datasets = prepare_datasets(plan)?;
    let assignments = vec![ModelAssignment {
        reasoning_model: cross.reasoning_model.clone(),
        knowledge_model: cross.knowledge_model.clone(),
        setting,
    }];
    run_matrix(plan, gateway, out_dir, &datasets, &assignments, &strategies)
}

fn run_matrix(
    plan: &ExperimentPlan,
    gateway: &Gateway,
    out_dir: &Path,
    datasets: &[PreparedDataset],
    assignments: &[ModelAssignment],
    strategies: &[StrategyKind],
) -> Result<Vec<EvalReport>, EvalError> {
    let cache = KnowledgeCache::new();
    let mut reports = Vec::new();
    let mut transcript_files: BTreeMap<PathBuf, Vec<String>> = BTreeMap::new();

    for assignment in assignments {
        for prepared in datasets {
            for &strategy in strategies {
                for &temperature in &plan.temperatures {
                    let report = run_block(
                        plan,
                        gateway,
                        &cache,
                        prepared,
                        assignment,
                        strategy,
                        temperature,
                        out_dir,
                        &mut transcript_files,
                    )?;
                    reports.push(report);
                }
            }
        }
    }

    for (path, lines) in &transcript_files {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| EvalError::OutputIo {
                path: parent.to_path_buf(),
                reason: e.to_string(),
            })?;
        }
        let mut body = lines.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| EvalError::OutputIo {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }

    reports.sort_by_key(|r| r.sort_key());
    Ok(reports)
}

#[allow(clippy::too_many_arguments)]
fn run_block(
    plan: &ExperimentPlan,
    gateway: &Gateway,
    cache: &KnowledgeCache,
    prepared: &PreparedDataset,
    assignment: &ModelAssignment,
    strategy: StrategyKind,
    temperature: f64,
    out_dir: &Path,
    transcript_files: &mut BTreeMap<PathBuf, Vec<String>>,
) -> Result<EvalReport, EvalError> {
    let before = gateway.counters();
    let n_perms = prepared.permutations.len();

    // One job per (repetition, permutation, example).
    let mut jobs = Vec::new();
    for repetition in 0..plan.repetitions {
        for perm_index in 0..n_perms {
            for example_index in 0..prepared.examples.len() {
                jobs.push((repetition, perm_index, example_index));
            }
        }
    }

    let run_one = |job: &(usize, usize, usize)| -> PipelineTranscript {
        let (repetition, perm_index, example_index) = *job;
        let stages = stage_params(plan, assignment, temperature, repetition);
        let ctx = PipelineContext {
            gateway,
            cache,
            stages,
        };
        let example = &prepared.examples[example_index];
        let order = &prepared.permutations[perm_index];
        let mut transcript = match run_pipeline(strategy, &prepared.task, example, order, &ctx) {
            Ok(t) => t,
            Err(failed) => {
                log::warn!(
                    "pipeline failed for example `{}` (perm {perm_index}, rep {repetition}): {}",
                    example.id,
                    failed.error
                );
                *failed.transcript
            }
        };
        transcript.dataset_id = prepared.manifest.dataset_id.clone();
        transcript.permutation_index = perm_index;
        transcript.repetition = repetition;
        transcript.temperature = temperature;
        transcript
    };

    let mut transcripts = run_parallel(&jobs, plan.max_concurrency, run_one);

    // Deterministic aggregation order, independent of worker completion.
    transcripts.sort_by(|a, b| {
        (&a.example_id, a.permutation_index, a.repetition).cmp(&(
            &b.example_id,
            b.permutation_index,
            b.repetition,
        ))
    });

    for transcript in &transcripts {
        let path = transcript_path(
            out_dir,
            assignment,
            prepared,
            strategy,
            transcript.permutation_index,
        );
        let line = serde_json::to_string(transcript).expect("transcript serializes");
        transcript_files.entry(path).or_default().push(line);
    }

    let block = score_transcripts(&transcripts, &prepared.task.label_names())?;
    Ok(EvalReport {
        model_id: assignment.reasoning_model.clone(),
        knowledge_model_id: assignment.knowledge_model.clone(),
        setting: assignment.setting,
        task_id: prepared.task.task_id.clone(),
        dataset_id: prepared.manifest.dataset_id.clone(),
        language: prepared.manifest.language.clone(),
        strategy,
        temperature,
        axis: block.axis,
        macro_f1_mean: block.macro_f1_mean,
        macro_f1_std: block.macro_f1_std,
        run_scores: block.run_scores,
        per_label: block.per_label,
        examples: prepared.examples.len(),
        scored: block.scored,
        unparsed: block.unparsed,
        unparsed_rate: block.unparsed_rate,
        failures: block.failures,
        calls: gateway.counters().delta_since(&before),
    })
}

struct ScoredBlock {
    run_scores: Vec<RunScore>,
    per_label: BTreeMap<String, LabelMetrics>,
    axis: VariedAxis,
    macro_f1_mean: f64,
    macro_f1_std: f64,
    scored: usize,
    unparsed: usize,
    unparsed_rate: f64,
    failures: usize,
}

/// Scores one block of transcripts: per-(repetition, permutation) macro-F1,
/// a pooled per-label breakdown, and the mean/std over the varied axis.
/// Failed transcripts are excluded from scoring and counted.
fn score_transcripts(
    transcripts: &[PipelineTranscript],
    labels: &[String],
) -> Result<ScoredBlock, EvalError> {
    let mut pairs: Vec<(usize, usize)> = transcripts
        .iter()
        .map(|t| (t.repetition, t.permutation_index))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let repetitions = transcripts
        .iter()
        .map(|t| t.repetition)
        .max()
        .map_or(1, |m| m + 1);

    let mut run_scores = Vec::new();
    let mut pooled = crate::metrics::ConfusionTable::new(labels);
    let mut failures = 0usize;
    let mut scored = 0usize;
    for (repetition, perm_index) in pairs {
        let mut preds = Vec::new();
        for t in transcripts
            .iter()
            .filter(|t| t.repetition == repetition && t.permutation_index == perm_index)
        {
            if t.error.is_some() {
                failures += 1;
                continue;
            }
            preds.push((t.prediction.clone(), t.gold_label.clone()));
            pooled.record(&t.prediction, &t.gold_label)?;
            scored += 1;
        }
        if preds.is_empty() {
            log::warn!("no scored examples for permutation {perm_index} repetition {repetition}");
            continue;
        }
        run_scores.push(RunScore {
            repetition,
            permutation_index: perm_index,
            macro_f1: macro_f1(&preds, labels)?,
        });
    }

    let axis = if repetitions > 1 {
        VariedAxis::Repetitions
    } else {
        VariedAxis::Permutations
    };
    let axis_values: Vec<f64> = match axis {
        VariedAxis::Permutations => run_scores.iter().map(|r| r.macro_f1).collect(),
        VariedAxis::Repetitions => (0..repetitions)
            .filter_map(|rep| {
                let per_rep: Vec<f64> = run_scores
                    .iter()
                    .filter(|r| r.repetition == rep)
                    .map(|r| r.macro_f1)
                    .collect();
                mean_std(&per_rep).ok().map(|(mean, _)| mean)
            })
            .collect(),
    };
    let (macro_f1_mean, macro_f1_std) = if axis_values.is_empty() {
        (0.0, 0.0)
    } else {
        mean_std(&axis_values)?
    };

    let unparsed = pooled.unparsed;
    Ok(ScoredBlock {
        run_scores,
        per_label: pooled.label_metrics(),
        axis,
        macro_f1_mean,
        macro_f1_std,
        scored,
        unparsed,
        unparsed_rate: if scored == 0 {
            0.0
        } else {
            unparsed as f64 / scored as f64
        },
        failures,
    })
}

/// Rebuilds reports from persisted transcripts alone, so every table stays
/// recomputable without the original reports file. Task definitions supply
/// the label sets. Call counters are reconstructed from the transcripts'
/// non-cached calls; transport/store splits are not recoverable.
pub fn reports_from_transcripts(
    transcripts: &[PipelineTranscript],
    tasks: &[TaskSpec],
) -> Result<Vec<EvalReport>, EvalError> {
    type GroupKey = (String, String, String, StrategyKind, u64, String);
    let mut groups: BTreeMap<GroupKey, Vec<PipelineTranscript>> = BTreeMap::new();
    for t in transcripts {
        let knowledge_model = if t.strategy.has_knowledge_step() {
            t.calls
                .first()
                .map(|c| c.model_id.clone())
                .unwrap_or_else(|| t.model_id.clone())
        } else {
            t.model_id.clone()
        };
        let key = (
            t.model_id.clone(),
            t.task_id.clone(),
            t.dataset_id.clone(),
            t.strategy,
            t.temperature.to_bits(),
            knowledge_model,
        );
        groups.entry(key).or_default().push(t.clone());
    }

    let mut reports = Vec::new();
    for ((model_id, task_id, dataset_id, strategy, temp_bits, knowledge_model), mut group) in groups
    {
        let task = tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| EvalError::UnknownTask(dataset_id.clone(), task_id.clone()))?;
        group.sort_by(|a, b| {
            (&a.example_id, a.permutation_index, a.repetition).cmp(&(
                &b.example_id,
                b.permutation_index,
                b.repetition,
            ))
        });
        let block = score_transcripts(&group, &task.label_names())?;
        let mut example_ids: Vec<&str> = group.iter().map(|t| t.example_id.as_str()).collect();
        example_ids.sort_unstable();
        example_ids.dedup();
        let completions_served = group
            .iter()
            .map(|t| t.calls.iter().filter(|c| !c.cached).count())
            .sum();
        let setting = if knowledge_model == model_id {
            KnowledgeSource::SelfModel
        } else {
            KnowledgeSource::CrossModel
        };
        reports.push(EvalReport {
            model_id,
            knowledge_model_id: knowledge_model,
            setting,
            task_id,
            dataset_id,
            language: group
                .first()
                .map(|t| t.language.clone())
                .unwrap_or_default(),
            strategy,
            temperature: f64::from_bits(temp_bits),
            axis: block.axis,
            macro_f1_mean: block.macro_f1_mean,
            macro_f1_std: block.macro_f1_std,
            run_scores: block.run_scores,
            per_label: block.per_label,
            examples: example_ids.len(),
            scored: block.scored,
            unparsed: block.unparsed,
            unparsed_rate: block.unparsed_rate,
            failures: block.failures,
            calls: CallCounters {
                completions_served,
                transport_calls: 0,
                store_hits: 0,
            },
        });
    }
    reports.sort_by_key(|r| r.sort_key());
    Ok(reports)
}

fn transcript_path(
    out_dir: &Path,
    assignment: &ModelAssignment,
    prepared: &PreparedDataset,
    strategy: StrategyKind,
    perm_index: usize,
) -> PathBuf {
    let mut name = format!(
        "{}__{}__{}",
        sanitize(&prepared.task.task_id),
        sanitize(&prepared.manifest.dataset_id),
        strategy.as_str(),
    );
    if assignment.setting == KnowledgeSource::CrossModel {
        name.push_str("__cross");
    }
    out_dir
        .join("transcripts")
        .join(sanitize(&assignment.reasoning_model))
        .join(format!("{name}__p{perm_index}.jsonl"))
}

/// Path-safe slug: anything outside [A-Za-z0-9._-] becomes '-'.
pub fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Runs `f` over the jobs on a bounded worker pool. Results come back in
/// job order regardless of scheduling.
fn run_parallel<J: Sync, T: Send>(
    jobs: &[J],
    workers: usize,
    f: impl Fn(&J) -> T + Sync,
) -> Vec<T> {
    let workers = workers.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let out = f(&jobs[i]);
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every job produced a result"))
        .collect()
}

/// One line of the dry-run call budget.
#[derive(Debug, Clone, Serialize)]
pub struct BudgetLine {
    pub model_id: String,
    pub dataset_id: String,
    pub strategy: StrategyKind,
    pub examples: usize,
    pub permutations: usize,
    pub repetitions: usize,
    pub temperatures: usize,
    /// examples x permutations x repetitions x temperatures x calls-per-strategy
    pub budget: usize,
    /// Same, with order-independent knowledge calls collapsed by the cache.
    pub with_cache: usize,
}

/// Computes the full call budget of a plan without any network activity.
pub fn call_budget(plan: &ExperimentPlan, datasets: &[PreparedDataset]) -> Vec<BudgetLine> {
    let mut out = Vec::new();
    for model in &plan.models {
        for prepared in datasets {
            for &strategy in &plan.strategies {
                let e = prepared.examples.len();
                let p = prepared.permutations.len();
                let r = plan.repetitions;
                let t = plan.temperatures.len();
                let budget = e * p * r * t * strategy.calls_per_example();
                let with_cache = if strategy.has_knowledge_step() {
                    // Knowledge pinned to temperature 0 during an ablation is
                    // generated once per example; otherwise once per
                    // (example, temperature, repetition-at-positive-temp).
                    let knowledge_calls = if plan.is_temperature_ablation() {
                        e
                    } else {
                        let temp = plan.temperatures[0];
                        if temp > 0.0 {
                            e * r
                        } else {
                            e
                        }
                    };
                    knowledge_calls + e * p * r * t * 2
                } else {
                    budget
                };
                out.push(BudgetLine {
                    model_id: model.clone(),
                    dataset_id: prepared.manifest.dataset_id.clone(),
                    strategy,
                    examples: e,
                    permutations: p,
                    repetitions: r,
                    temperatures: t,
                    budget,
                    with_cache,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedTransport;
    use crate::ingest::{FileFormat, RemapRule};
    use crate::templates::ANSWER_TRIGGER;
    use crate::types::{LabelDef, Role};
    use std::io::Write;

    fn write_dataset(dir: &Path, n: usize) -> PathBuf {
        let path = dir.join("data.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        for i in 0..n {
            let label = if i % 2 == 0 {
                "Help-seeking"
            } else {
                "Help-offering"
            };
            writeln!(
                f,
                r#"{{"id":"ex{i}","text":"tweet number {i} about the flood","label":"{label}"}}"#
            )
            .unwrap();
        }
        path
    }

    fn intent_task() -> TaskSpec {
        TaskSpec::new(
            "intent",
            "Classify the given tweet into one of the given categories.",
            vec![
                LabelDef::new("Help-seeking", "Tweets asking for help."),
                LabelDef::new("Help-offering", "Tweets offering help."),
            ],
        )
        .unwrap()
    }

    fn plan_for(dir: &Path, n: usize, strategies: Vec<StrategyKind>) -> ExperimentPlan {
        let data = write_dataset(dir, n);
        ExperimentPlan {
            models: vec!["model-a".into()],
            tasks: vec![intent_task()],
            datasets: vec![DatasetManifest {
                dataset_id: "toy".into(),
                task_id: "intent".into(),
                path: data,
                format: FileFormat::Jsonl,
                text_field: "text".into(),
                label_field: "label".into(),
                id_field: "id".into(),
                remap: RemapRule::None,
                language: "en".into(),
                event: "flood".into(),
            }],
            strategies,
            permutations: PermutationPolicy::All,
            repetitions: 1,
            temperatures: vec![0.0],
            cross_model: None,
            base_seed: 42,
            max_concurrency: 4,
            gen: GenDefaults::default(),
        }
    }

    /// Scripted gateway: knowledge/reasoning canned, answer echoes the
    /// gold label embedded in the tweet ("tweet number {i}").
    fn echo_gold_gateway() -> Gateway {
        Gateway::live(ScriptedTransport::new(|req| {
            let last = req.messages.last().unwrap();
            if last.role == Role::Assistant && last.content.ends_with(ANSWER_TRIGGER) {
                let tweet_msg = req
                    .messages
                    .iter()
                    .find(|m| m.content.contains("Tweet: tweet number"))
                    .unwrap();
                let i: usize = tweet_msg
                    .content
                    .split("tweet number ")
                    .nth(1)
                    .unwrap()
                    .split_whitespace()
                    .next()
                    .unwrap()
                    .parse()
                    .unwrap();
                Ok(if i.is_multiple_of(2) {
                    "Help-seeking"
                } else {
                    "Help-offering"
                }
                .to_string())
            } else if last.content.starts_with("Question: What is the") {
                Ok("The user is engaging with the flood.".to_string())
            } else {
                Ok("Step by step reasoning.".to_string())
            }
        }))
    }

    #[test]
    fn two_label_task_runs_two_permutations() {
        let dir = tempfile::tempdir().unwrap();
        let plan = plan_for(dir.path(), 4, vec![StrategyKind::ZeroCot]);
        let gateway = echo_gold_gateway();
        let reports = run_experiment(&plan, &gateway, dir.path()).unwrap();
        assert_eq!(reports.len(), 1);
        let report = &reports[0];
        assert_eq!(report.run_scores.len(), 2);
        assert_eq!(report.axis, VariedAxis::Permutations);
        assert_eq!(report.macro_f1_mean, 1.0);
        assert_eq!(report.macro_f1_std, 0.0);
        assert_eq!(report.failures, 0);
        assert_eq!(report.unparsed, 0);
    }

    #[test]
    fn call_accounting_zero_cot_vs_goal_based() {
        let dir = tempfile::tempdir().unwrap();
        let plan = plan_for(
            dir.path(),
            10,
            vec![StrategyKind::ZeroCot, StrategyKind::GoalBased],
        );
        let gateway = echo_gold_gateway();
        let reports = run_experiment(&plan, &gateway, dir.path()).unwrap();
        let perms = 2;
        let zero_cot = reports
            .iter()
            .find(|r| r.strategy == StrategyKind::ZeroCot)
            .unwrap();
        assert_eq!(zero_cot.calls.completions_served, 2 * perms * 10);
        let goal = reports
            .iter()
            .find(|r| r.strategy == StrategyKind::GoalBased)
            .unwrap();
        assert_eq!(goal.calls.completions_served, 10 + 2 * perms * 10);
    }

    #[test]
    fn report_mean_std_recomputable_from_run_scores() {
        let dir = tempfile::tempdir().unwrap();
        let plan = plan_for(dir.path(), 6, vec![StrategyKind::SelfDebias]);
        let gateway = echo_gold_gateway();
        let reports = run_experiment(&plan, &gateway, dir.path()).unwrap();
        let report = &reports[0];
        let values: Vec<f64> = report.run_scores.iter().map(|r| r.macro_f1).collect();
        let (mean, std) = mean_std(&values).unwrap();
        assert_eq!(report.macro_f1_mean, mean);
        assert_eq!(report.macro_f1_std, std);
    }

    #[test]
    fn transcripts_persisted_one_file_per_permutation() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let plan = plan_for(dir.path(), 3, vec![StrategyKind::GoalBased]);
        let gateway = echo_gold_gateway();
        run_experiment(&plan, &gateway, &out).unwrap();
        for p in 0..2 {
            let path = out
                .join("transcripts")
                .join("model-a")
                .join(format!("intent__toy__goal-based__p{p}.jsonl"));
            let text = std::fs::read_to_string(&path).unwrap();
            assert_eq!(text.lines().count(), 3);
            let t: PipelineTranscript = serde_json::from_str(text.lines().next().unwrap()).unwrap();
            assert_eq!(t.permutation_index, p);
            assert_eq!(t.calls.len(), 3);
        }
    }

    #[test]
    fn cross_model_uses_knowledge_model_on_first_call_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = plan_for(dir.path(), 2, vec![StrategyKind::GoalBased]);
        plan.cross_model = Some(CrossModelSpec {
            knowledge_model: "model-k".into(),
            reasoning_model: "model-a".into(),
        });
        let gateway = echo_gold_gateway();
        let out = dir.path().join("out");
        let reports = run_cross_model(&plan, &gateway, &out).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].setting, KnowledgeSource::CrossModel);
        assert_eq!(reports[0].knowledge_model_id, "model-k");

        let path = out
            .join("transcripts")
            .join("model-a")
            .join("intent__toy__goal-based__cross__p0.jsonl");
        let text = std::fs::read_to_string(path).unwrap();
        for line in text.lines() {
            let t: PipelineTranscript = serde_json::from_str(line).unwrap();
            assert_eq!(t.calls[0].model_id, "model-k");
            assert_eq!(t.calls[1].model_id, "model-a");
            assert_eq!(t.calls[2].model_id, "model-a");
            // No call mixes model ids; each call has exactly one.
        }
    }

    #[test]
    fn cross_model_same_ids_labeled_self() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = plan_for(dir.path(), 2, vec![StrategyKind::GoalBased]);
        plan.cross_model = Some(CrossModelSpec {
            knowledge_model: "model-a".into(),
            reasoning_model: "model-a".into(),
        });
        let gateway = echo_gold_gateway();
        let reports = run_cross_model(&plan, &gateway, dir.path()).unwrap();
        assert_eq!(reports[0].setting, KnowledgeSource::SelfModel);
    }

    #[test]
    fn repetitions_at_temperature_zero_have_zero_std() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = plan_for(dir.path(), 4, vec![StrategyKind::ZeroCot]);
        plan.repetitions = 5;
        let gateway = echo_gold_gateway();
        let reports = run_experiment(&plan, &gateway, dir.path()).unwrap();
        let report = &reports[0];
        assert_eq!(report.axis, VariedAxis::Repetitions);
        assert_eq!(report.macro_f1_std, 0.0);
        assert_eq!(report.run_scores.len(), 5 * 2);
    }

    #[test]
    fn invalid_plan_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = plan_for(dir.path(), 2, vec![StrategyKind::ZeroCot]);
        plan.repetitions = 0;
        assert!(matches!(plan.validate(), Err(EvalError::InvalidPlan(_))));
        let mut plan2 = plan_for(dir.path(), 2, vec![StrategyKind::ZeroCot]);
        plan2.temperatures.clear();
        assert!(plan2.validate().is_err());
    }

    #[test]
    fn budget_matches_formula() {
        let dir = tempfile::tempdir().unwrap();
        let plan = plan_for(
            dir.path(),
            10,
            vec![StrategyKind::ZeroCot, StrategyKind::GoalBased],
        );
        let datasets = prepare_datasets(&plan).unwrap();
        let lines = call_budget(&plan, &datasets);
        // examples x perms x reps x temps x calls-per-strategy
        let (examples, perms, reps, temps) = (10, 2, 1, 1);
        let zero = lines
            .iter()
            .find(|l| l.strategy == StrategyKind::ZeroCot)
            .unwrap();
        assert_eq!(zero.budget, examples * perms * reps * temps * 2);
        assert_eq!(zero.with_cache, zero.budget);
        let goal = lines
            .iter()
            .find(|l| l.strategy == StrategyKind::GoalBased)
            .unwrap();
        assert_eq!(goal.budget, examples * perms * reps * temps * 3);
        assert_eq!(
            goal.with_cache,
            examples + examples * perms * reps * temps * 2
        );
    }
}
