//! Dataset loading and label remapping.
//!
//! The canonical interchange format is JSONL with fields
//! `{id, text, label, language, event}`; CSV is supported through an
//! explicit column mapping. Remap rules translate source-taxonomy labels
//! into the task's label set; raw labels are matched exactly after
//! trimming, never fuzzily.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Example;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("{path} is not valid UTF-8")]
    BadEncoding { path: PathBuf },
    #[error("missing column `{column}` in {path} (row {row})")]
    MissingColumn {
        column: String,
        path: PathBuf,
        row: usize,
    },
    #[error("malformed row {row} in {path}: {reason}")]
    MalformedRow {
        row: usize,
        path: PathBuf,
        reason: String,
    },
    #[error("duplicate example id `{id}` in {path}")]
    DuplicateId { id: String, path: PathBuf },
    #[error("dataset {path} has no examples after remapping")]
    EmptyDataset { path: PathBuf },
    #[error("unknown remap rule `{0}`")]
    UnknownRemapRule(String),
}

/// Source file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Jsonl,
    Csv,
}

/// Registered remap rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemapRule {
    /// Pass labels through unchanged, dropping nothing.
    None,
    /// TREC-IS intent labels onto Help-seeking / Help-offering.
    TrecIs,
    /// CrisisLexT26 categories onto the three target themes.
    CrisislexTheme,
    /// Chile humanitarian labels onto Yes / No.
    ChileBinary,
}

impl RemapRule {
    pub fn parse(name: &str) -> Result<Self, IngestError> {
        match name.trim().to_lowercase().as_str() {
            "none" | "identity" => Ok(RemapRule::None),
            "trec_is" => Ok(RemapRule::TrecIs),
            "crisislex_theme" => Ok(RemapRule::CrisislexTheme),
            "chile_binary" => Ok(RemapRule::ChileBinary),
            other => Err(IngestError::UnknownRemapRule(other.to_string())),
        }
    }

    pub fn apply(&self, raw: &str) -> RemapOutcome {
        match self {
            RemapRule::None => RemapOutcome::Keep(raw.trim().to_string()),
            RemapRule::TrecIs => remap_trec_is(raw),
            RemapRule::CrisislexTheme => remap_crisislex_theme(raw),
            RemapRule::ChileBinary => remap_chile_binary(raw),
        }
    }

    /// Canonical output order for the rule, used when printing counts.
    pub fn target_labels(&self) -> Option<&'static [&'static str]> {
        match self {
            RemapRule::None => None,
            RemapRule::TrecIs => Some(&["Help-seeking", "Help-offering"]),
            RemapRule::CrisislexTheme => Some(&[
                "Donations and volunteering",
                "Infrastructure and utilities",
                "Affected individuals",
            ]),
            RemapRule::ChileBinary => Some(&["Yes", "No"]),
        }
    }
}

/// Result of remapping one raw label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemapOutcome {
    Keep(String),
    Drop,
}

/// GoodServices, SearchAndRescue and InformationWanted become
/// Help-seeking; ServiceAvailable becomes Help-offering; everything else
/// is dropped.
pub fn remap_trec_is(raw: &str) -> RemapOutcome {
    match raw.trim() {
        "GoodServices" | "SearchAndRescue" | "InformationWanted" => {
            RemapOutcome::Keep("Help-seeking".into())
        }
        "ServiceAvailable" => RemapOutcome::Keep("Help-offering".into()),
        _ => RemapOutcome::Drop,
    }
}

/// Pass-through for the three target themes; all other CrisisLexT26
/// categories are dropped.
pub fn remap_crisislex_theme(raw: &str) -> RemapOutcome {
    match raw.trim() {
        "Donations and volunteering" | "Infrastructure and utilities" | "Affected individuals" => {
            RemapOutcome::Keep(raw.trim().into())
        }
        _ => RemapOutcome::Drop,
    }
}

/// "Requests or Needs" becomes Yes, "Not Humanitarian" becomes No,
/// everything else is dropped.
pub fn remap_chile_binary(raw: &str) -> RemapOutcome {
    match raw.trim() {
        "Requests or Needs" => RemapOutcome::Keep("Yes".into()),
        "Not Humanitarian" => RemapOutcome::Keep("No".into()),
        _ => RemapOutcome::Drop,
    }
}

/// Where one dataset comes from and how its columns map onto examples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    /// Task this dataset evaluates, by task_id.
    pub task_id: String,
    pub path: PathBuf,
    pub format: FileFormat,
    #[serde(default = "default_text_field")]
    pub text_field: String,
    #[serde(default = "default_label_field")]
    pub label_field: String,
    #[serde(default = "default_id_field")]
    pub id_field: String,
    pub remap: RemapRule,
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

/// Load statistics for reporting and validation output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub input_rows: usize,
    pub dropped: usize,
    pub per_label: BTreeMap<String, usize>,
}

impl LoadStats {
    /// Counts rendered as `Label (n), Label (n)`, in the remap rule's
    /// canonical order when it has one, else alphabetical.
    pub fn counts_line(&self, rule: RemapRule) -> String {
        let ordered: Vec<(String, usize)> = match rule.target_labels() {
            Some(order) => order
                .iter()
                .filter_map(|name| {
                    self.per_label
                        .get(*name)
                        .map(|count| (name.to_string(), *count))
                })
                .collect(),
            None => self
                .per_label
                .iter()
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        };
        ordered
            .iter()
            .map(|(name, count)| format!("{name} ({count})"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Loads a dataset, applying the manifest's remap rule. Rows whose
/// remapped label is Drop are excluded; ids must be unique.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<Example>, IngestError> {
    load_dataset_with_stats(manifest).map(|(examples, _)| examples)
}

pub fn load_dataset_with_stats(
    manifest: &DatasetManifest,
) -> Result<(Vec<Example>, LoadStats), IngestError> {
    let bytes = fs::read(&manifest.path).map_err(|e| IngestError::Unreadable {
        path: manifest.path.clone(),
        reason: e.to_string(),
    })?;
    let text = String::from_utf8(bytes).map_err(|_| IngestError::BadEncoding {
        path: manifest.path.clone(),
    })?;

    let rows = match manifest.format {
        FileFormat::Jsonl => parse_jsonl(&text, manifest)?,
        FileFormat::Csv => parse_csv(&text, manifest)?,
    };

    let mut stats = LoadStats {
        input_rows: rows.len(),
        ..LoadStats::default()
    };
    let mut seen_ids = HashSet::new();
    let mut examples = Vec::new();
    for raw in rows {
        match manifest.remap.apply(&raw.label) {
            RemapOutcome::Drop => stats.dropped += 1,
            RemapOutcome::Keep(label) => {
                if !seen_ids.insert(raw.id.clone()) {
                    return Err(IngestError::DuplicateId {
                        id: raw.id,
                        path: manifest.path.clone(),
                    });
                }
                *stats.per_label.entry(label.clone()).or_insert(0) += 1;
                examples.push(Example {
                    id: raw.id,
                    text: raw.text,
                    gold: label,
                    language: manifest.language.clone(),
                    event: manifest.event.clone(),
                });
            }
        }
    }
    if examples.is_empty() {
        return Err(IngestError::EmptyDataset {
            path: manifest.path.clone(),
        });
    }
    log::info!(
        "loaded {}: {} rows, {} kept, {} dropped",
        manifest.dataset_id,
        stats.input_rows,
        examples.len(),
        stats.dropped
    );
    Ok((examples, stats))
}

struct RawRow {
    id: String,
    text: String,
    label: String,
}

fn parse_jsonl(text: &str, manifest: &DatasetManifest) -> Result<Vec<RawRow>, IngestError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| IngestError::MalformedRow {
                row,
                path: manifest.path.clone(),
                reason: e.to_string(),
            })?;
        let field = |name: &str| -> Result<String, IngestError> {
            match value.get(name) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
                Some(other) => Err(IngestError::MalformedRow {
                    row,
                    path: manifest.path.clone(),
                    reason: format!("field `{name}` has non-scalar value {other}"),
                }),
                None => Err(IngestError::MissingColumn {
                    column: name.to_string(),
                    path: manifest.path.clone(),
                    row,
                }),
            }
        };
        rows.push(RawRow {
            id: field(&manifest.id_field)?,
            text: field(&manifest.text_field)?,
            label: field(&manifest.label_field)?,
        });
    }
    Ok(rows)
}

fn parse_csv(text: &str, manifest: &DatasetManifest) -> Result<Vec<RawRow>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            row: 1,
            path: manifest.path.clone(),
            reason: e.to_string(),
        })?
        .clone();
    let column = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                column: name.to_string(),
                path: manifest.path.clone(),
                row: 1,
            })
    };
    let id_col = column(&manifest.id_field)?;
    let text_col = column(&manifest.text_field)?;
    let label_col = column(&manifest.label_field)?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // header is row 1
        let record = record.map_err(|e| IngestError::MalformedRow {
            row,
            path: manifest.path.clone(),
            reason: e.to_string(),
        })?;
        let get = |col: usize, name: &str| -> Result<String, IngestError> {
            record
                .get(col)
                .map(|s| s.to_string())
                .ok_or_else(|| IngestError::MissingColumn {
                    column: name.to_string(),
                    path: manifest.path.clone(),
                    row,
                })
        };
        rows.push(RawRow {
            id: get(id_col, &manifest.id_field)?,
            text: get(text_col, &manifest.text_field)?,
            label: get(label_col, &manifest.label_field)?,
        });
    }
    Ok(rows)
}
