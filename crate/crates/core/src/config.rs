//! Declarative experiment configuration.
//!
//! One TOML file names the models, endpoint, tasks, datasets, strategies,
//! permutation policy, temperatures, repetitions, seeds and output
//! directory, so an experiment is a diffable artifact. Credentials never
//! live in the file: the backend section names an environment variable
//! holding the bearer token.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{
    CrossModelSpec, ExperimentPlan, GenDefaults, PermutationPolicy, SalienceProbeConfig,
};
use crate::gateway::Gateway;
use crate::ingest::{DatasetManifest, FileFormat, RemapRule};
use crate::types::{LabelDef, StrategyKind, TaskSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("environment variable `{0}` is not set")]
    MissingEnv(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Config {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub permutations: PermutationSection,
    pub backend: BackendSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub cross_model: Option<CrossModelSection>,
    pub tasks: Vec<TaskSection>,
    pub datasets: Vec<DatasetSection>,
    #[serde(default)]
    pub probe: Option<ProbeSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ExperimentSection {
    #[serde(default)]
    pub name: String,
    pub models: Vec<String>,
    pub strategies: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    /// Exit code 2 when the failed-example fraction exceeds this.
    #[serde(default)]
    pub max_failure_rate: f64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_repetitions() -> usize {
    1
}
fn default_temperatures() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PermutationSection {
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_policy() -> String {
    "all".into()
}

impl Default for PermutationSection {
    fn default() -> Self {
        Self {
            policy: default_policy(),
            k: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Record,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct BackendSection {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub fixture_path: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default)]
pub struct GenerationSection {
    pub top_p: f64,
    pub max_tokens_knowledge: u32,
    pub max_tokens_reasoning: u32,
    pub max_tokens_answer: u32,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let d = GenDefaults::default();
        Self {
            top_p: d.top_p,
            max_tokens_knowledge: d.max_tokens_knowledge,
            max_tokens_reasoning: d.max_tokens_reasoning,
            max_tokens_answer: d.max_tokens_answer,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CrossModelSection {
    pub knowledge_model: String,
    pub reasoning_model: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct TaskSection {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub binary: bool,
    #[serde(default)]
    pub allow_empty_definitions: bool,
    pub labels: Vec<LabelSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct LabelSection {
    pub name: String,
    #[serde(default)]
    pub definition: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DatasetSection {
    pub id: String,
    pub task: String,
    pub path: PathBuf,
    pub format: FileFormat,
    #[serde(default = "default_text_field")]
    pub text_field: String,
    #[serde(default = "default_label_field")]
    pub label_field: String,
    #[serde(default = "default_id_field")]
    pub id_field: String,
    #[serde(default = "default_remap")]
    pub remap: String,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub event: String,
}

fn default_text_field() -> String {
    "text".into()
}
fn default_label_field() -> String {
    "label".into()
}
fn default_id_field() -> String {
    "id".into()
}
fn default_remap() -> String {
    "none".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ProbeSection {
    pub task_description: String,
    pub paraphrase_file: PathBuf,
    #[serde(default = "default_samples_per_prompt")]
    pub samples_per_prompt: usize,
    #[serde(default = "default_probe_temperature")]
    pub temperature: f64,
    #[serde(default = "default_probe_top_p")]
    pub top_p: f64,
    #[serde(default = "default_probe_max_tokens")]
    pub max_tokens: u32,
}

fn default_samples_per_prompt() -> usize {
    20
}
fn default_probe_temperature() -> f64 {
    0.7
}
fn default_probe_top_p() -> f64 {
    0.9
}
fn default_probe_max_tokens() -> u32 {
    128
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub max_concurrency: Option<usize>,
    pub seed: Option<u64>,
    pub strategies: Vec<StrategyKind>,
    pub models: Vec<String>,
    pub datasets: Vec<String>,
}

impl Config {
    /// Loads and resolves a config file. Relative dataset, fixture and
    /// output paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut config: Config = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.experiment.output_dir);
        if let Some(fixture) = &mut self.backend.fixture_path {
            resolve(fixture);
        }
        for dataset in &mut self.datasets {
            resolve(&mut dataset.path);
        }
        if let Some(probe) = &mut self.probe {
            resolve(&mut probe.paraphrase_file);
        }
    }

    pub fn apply_overrides(&mut self, overrides: &Overrides) -> Result<(), ConfigError> {
        if let Some(dir) = &overrides.output_dir {
            self.experiment.output_dir = dir.clone();
        }
        if let Some(kind) = overrides.backend {
            self.backend.kind = kind;
        }
        if let Some(n) = overrides.max_concurrency {
            self.backend.max_concurrency = n;
        }
        if let Some(seed) = overrides.seed {
            self.experiment.seed = seed;
        }
        if !overrides.strategies.is_empty() {
            let requested: Vec<String> = overrides
                .strategies
                .iter()
                .map(|s| s.as_str().to_string())
                .collect();
            self.experiment.strategies = requested;
        }
        if !overrides.models.is_empty() {
            for m in &overrides.models {
                if !self.experiment.models.contains(m) {
                    return Err(ConfigError::Invalid(format!(
                        "--model `{m}` is not in the config's model list"
                    )));
                }
            }
            self.experiment.models = overrides.models.clone();
        }
        if !overrides.datasets.is_empty() {
            for d in &overrides.datasets {
                if !self.datasets.iter().any(|ds| &ds.id == d) {
                    return Err(ConfigError::Invalid(format!(
                        "--dataset `{d}` is not in the config"
                    )));
                }
            }
            self.datasets
                .retain(|ds| overrides.datasets.contains(&ds.id));
        }
        Ok(())
    }

    pub fn permutation_policy(&self) -> Result<PermutationPolicy, ConfigError> {
        match self.permutations.policy.as_str() {
            "all" => Ok(PermutationPolicy::All),
            "sample" => {
                let k = self.permutations.k.ok_or_else(|| {
                    ConfigError::Invalid("permutations.policy = \"sample\" needs k".into())
                })?;
                Ok(PermutationPolicy::Sample {
                    k,
                    seed: self.permutations.seed.unwrap_or(self.experiment.seed),
                })
            }
            other => Err(ConfigError::Invalid(format!(
                "unknown permutation policy `{other}` (expected \"all\" or \"sample\")"
            ))),
        }
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        self.tasks
            .iter()
            .map(|t| {
                let spec = TaskSpec {
                    task_id: t.id.clone(),
                    question: t.question.clone(),
                    labels: t
                        .labels
                        .iter()
                        .map(|l| LabelDef::new(l.name.clone(), l.definition.clone()))
                        .collect(),
                    binary_mode: t.binary,
                    allow_empty_definitions: t.allow_empty_definitions,
                };
                spec.validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(spec)
            })
            .collect()
    }

    pub fn manifests(&self) -> Result<Vec<DatasetManifest>, ConfigError> {
        self.datasets
            .iter()
            .map(|d| {
                Ok(DatasetManifest {
                    dataset_id: d.id.clone(),
                    task_id: d.task.clone(),
                    path: d.path.clone(),
                    format: d.format,
                    text_field: d.text_field.clone(),
                    label_field: d.label_field.clone(),
                    id_field: d.id_field.clone(),
                    remap: RemapRule::parse(&d.remap)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                    language: d.language.clone(),
                    event: d.event.clone(),
                })
            })
            .collect()
    }

    pub fn to_plan(&self) -> Result<ExperimentPlan, ConfigError> {
        let strategies: Vec<StrategyKind> = self
            .experiment
            .strategies
            .iter()
            .map(|s| s.parse::<StrategyKind>().map_err(ConfigError::Invalid))
            .collect::<Result<_, _>>()?;
        let plan = ExperimentPlan {
            models: self.experiment.models.clone(),
            tasks: self.tasks()?,
            datasets: self.manifests()?,
            strategies,
            permutations: self.permutation_policy()?,
            repetitions: self.experiment.repetitions,
            temperatures: self.experiment.temperatures.clone(),
            cross_model: self.cross_model.as_ref().map(|c| CrossModelSpec {
                knowledge_model: c.knowledge_model.clone(),
                reasoning_model: c.reasoning_model.clone(),
            }),
            base_seed: self.experiment.seed,
            max_concurrency: self.backend.max_concurrency,
            gen: GenDefaults {
                top_p: self.generation.top_p,
                max_tokens_knowledge: self.generation.max_tokens_knowledge,
                max_tokens_reasoning: self.generation.max_tokens_reasoning,
                max_tokens_answer: self.generation.max_tokens_answer,
            },
        };
        plan.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(plan)
    }

    /// Builds the gateway the backend section describes. HTTP endpoints are
    /// validated up front; the bearer token comes from the named
    /// environment variable and never from the file.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let endpoint = || -> Result<String, ConfigError> {
            let raw = self
                .backend
                .endpoint
                .as_deref()
                .ok_or_else(|| ConfigError::Invalid("backend.endpoint is required".into()))?;
            let url = reqwest::Url::parse(raw)
                .map_err(|e| ConfigError::Invalid(format!("bad endpoint URL `{raw}`: {e}")))?;
            if !matches!(url.scheme(), "http" | "https") {
                return Err(ConfigError::Invalid(format!(
                    "endpoint `{raw}` must be http(s)"
                )));
            }
            Ok(raw.trim_end_matches('/').to_string())
        };
        let fixture = || -> Result<PathBuf, ConfigError> {
            self.backend
                .fixture_path
                .clone()
                .ok_or_else(|| ConfigError::Invalid("backend.fixture_path is required".into()))
        };
        let token = || -> Result<Option<String>, ConfigError> {
            match &self.backend.auth_env {
                None => Ok(None),
                Some(var) => std::env::var(var)
                    .map(Some)
                    .map_err(|_| ConfigError::MissingEnv(var.clone())),
            }
        };
        match self.backend.kind {
            BackendKind::Http => Ok(Gateway::http(
                endpoint()?,
                token()?,
                self.backend.max_concurrency,
            )),
            BackendKind::Replay => {
                Gateway::replay(&fixture()?).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            BackendKind::Record => {
                let transport = crate::gateway::HttpTransport::new(
                    endpoint()?,
                    token()?,
                    self.backend.max_concurrency,
                );
                Gateway::record(transport, &fixture()?)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }

    /// Reads the paraphrase file and assembles the probe configuration.
    pub fn probe_config(&self) -> Result<SalienceProbeConfig, ConfigError> {
        let probe = self
            .probe
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("no [probe] section configured".into()))?;
        let text = std::fs::read_to_string(&probe.paraphrase_file).map_err(|e| {
            ConfigError::Unreadable {
                path: probe.paraphrase_file.clone(),
                reason: e.to_string(),
            }
        })?;
        let paraphrases: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        if paraphrases.is_empty() {
            return Err(ConfigError::Invalid(format!(
                "paraphrase file {} has no prompts",
                probe.paraphrase_file.display()
            )));
        }
        Ok(SalienceProbeConfig {
            task_description: probe.task_description.clone(),
            paraphrases,
            samples_per_prompt: probe.samples_per_prompt,
            temperature: probe.temperature,
            top_p: probe.top_p,
            max_tokens: probe.max_tokens,
            base_seed: self.experiment.seed,
        })
    }
}

/// A standalone dataset manifest file, or a full config from which one or
/// all manifests are taken; `validate-data` accepts either.
pub fn load_manifests(path: &Path) -> Result<Vec<DatasetManifest>, ConfigError> {
    if let Ok(config) = Config::load(path) {
        return config.manifests();
    }
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let section: DatasetSection = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut manifest = DatasetManifest {
        dataset_id: section.id,
        task_id: section.task,
        path: section.path,
        format: section.format,
        text_field: section.text_field,
        label_field: section.label_field,
        id_field: section.id_field,
        remap: RemapRule::parse(&section.remap).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        language: section.language,
        event: section.event,
    };
    if manifest.path.is_relative() {
        manifest.path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.path);
    }
    Ok(vec![manifest])
}
