//! Human-evaluation sampling: exports a stratified sample of generated
//! knowledge for annotation and imports the annotated file back into
//! per-(task, model) quality proportions.
//!
//! Stratification uses largest-remainder apportionment over
//! (gold label x dataset) cells, so every cell count is within 1 of exact
//! proportionality. Sampling is deterministic under the seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::PipelineTranscript;

use super::{sanitize, EvalError};

/// One row of the annotation file. Annotators fill the two criteria
/// columns with binary values (1/0, yes/no, true/false).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub sample_id: String,
    pub task_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub strategy: String,
    pub gold_label: String,
    pub tweet: String,
    pub knowledge_text: String,
    #[serde(default)]
    pub faithfulness: String,
    #[serde(default)]
    pub helpfulness: String,
}

/// Quality proportions for one (task, model) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalSummary {
    pub task_id: String,
    pub model_id: String,
    pub rows: usize,
    pub faithfulness: f64,
    pub helpfulness: f64,
}

/// (gold label, dataset) cells of unique candidate transcripts.
type StrataCells<'a> = BTreeMap<(String, String), Vec<&'a PipelineTranscript>>;

/// Draws `per_model` knowledge-bearing samples per (task, model) group,
/// stratified by (gold label, dataset). Transcripts without knowledge or
/// with errors never qualify; duplicates of one example across
/// permutations and repetitions collapse to a single candidate.
pub fn export_human_eval(
    transcripts: &[PipelineTranscript],
    per_model: usize,
    seed: u64,
) -> Result<Vec<AnnotationRow>, EvalError> {
    // (task, model) -> stratification cells.
    let mut groups: BTreeMap<(String, String), StrataCells<'_>> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    let mut ordered: Vec<&PipelineTranscript> = transcripts.iter().collect();
    ordered.sort_by(|a, b| {
        (
            &a.task_id,
            &a.model_id,
            &a.dataset_id,
            &a.example_id,
            a.permutation_index,
            a.repetition,
        )
            .cmp(&(
                &b.task_id,
                &b.model_id,
                &b.dataset_id,
                &b.example_id,
                b.permutation_index,
                b.repetition,
            ))
    });
    for t in ordered {
        if t.error.is_some()
            || t.knowledge_text
                .as_deref()
                .is_none_or(|k| k.trim().is_empty())
        {
            continue;
        }
        let identity = (
            t.task_id.clone(),
            t.model_id.clone(),
            t.dataset_id.clone(),
            t.example_id.clone(),
        );
        if !seen.insert(identity) {
            continue;
        }
        groups
            .entry((t.task_id.clone(), t.model_id.clone()))
            .or_default()
            .entry((t.gold_label.clone(), t.dataset_id.clone()))
            .or_default()
            .push(t);
    }

    let mut rows = Vec::new();
    for (group_index, ((task_id, model_id), cells)) in groups.iter().enumerate() {
        let total: usize = cells.values().map(|v| v.len()).sum();
        if total < per_model {
            return Err(EvalError::InsufficientSamples {
                details: format!(
                    "task `{task_id}` model `{model_id}` has {total} knowledge-bearing samples, need {per_model}"
                ),
            });
        }
        let allocations = largest_remainder(
            &cells.values().map(|v| v.len()).collect::<Vec<_>>(),
            per_model,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(group_index as u64));
        for ((cell, candidates), take) in cells.iter().zip(allocations) {
            let mut pool: Vec<&&PipelineTranscript> = candidates.iter().collect();
            pool.shuffle(&mut rng);
            let mut chosen: Vec<&&PipelineTranscript> = pool.into_iter().take(take).collect();
            chosen.sort_by(|a, b| a.example_id.cmp(&b.example_id));
            for t in chosen {
                rows.push(AnnotationRow {
                    sample_id: format!(
                        "{}__{}__{}__{}",
                        sanitize(&t.task_id),
                        sanitize(&t.dataset_id),
                        sanitize(&t.example_id),
                        sanitize(&t.model_id)
                    ),
                    task_id: t.task_id.clone(),
                    dataset_id: cell.1.clone(),
                    model_id: t.model_id.clone(),
                    strategy: t.strategy.as_str().to_string(),
                    gold_label: t.gold_label.clone(),
                    tweet: t.example_text.clone(),
                    knowledge_text: t.knowledge_text.clone().unwrap_or_default(),
                    faithfulness: String::new(),
                    helpfulness: String::new(),
                });
            }
        }
    }
    Ok(rows)
}

/// Largest-remainder apportionment of `total` over cells with the given
/// populations. Each allocation is within 1 of exact proportionality and
/// never exceeds the cell population (for total <= sum of populations).
fn largest_remainder(populations: &[usize], total: usize) -> Vec<usize> {
    let n: usize = populations.iter().sum();
    if n == 0 {
        return vec![0; populations.len()];
    }
    let quotas: Vec<f64> = populations
        .iter()
        .map(|&p| total as f64 * p as f64 / n as f64)
        .collect();
    let mut allocations: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = allocations.iter().sum();
    let mut order: Vec<usize> = (0..populations.len()).collect();
    // Largest fractional remainder first; ties go to the earlier cell.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        allocations[i] += 1;
    }
    allocations
}

fn parse_binary(value: &str) -> Option<bool> {
    match value.trim().to_lowercase().as_str() {
        "1" | "y" | "yes" | "true" => Some(true),
        "0" | "n" | "no" | "false" => Some(false),
        _ => None,
    }
}

/// Aggregates a fully annotated file into per-(task, model) proportions of
/// positive faithfulness/helpfulness judgments. Rows with blank or
/// non-binary annotations abort with their ids listed.
pub fn import_human_eval(rows: &[AnnotationRow]) -> Result<Vec<HumanEvalSummary>, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::InvalidAnnotation("no rows".into()));
    }
    let mut bad: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(String, String), (usize, usize, usize)> = BTreeMap::new();
    for row in rows {
        match (
            parse_binary(&row.faithfulness),
            parse_binary(&row.helpfulness),
        ) {
            (Some(faithful), Some(helpful)) => {
                let entry = groups
                    .entry((row.task_id.clone(), row.model_id.clone()))
                    .or_insert((0, 0, 0));
                entry.0 += 1;
                if faithful {
                    entry.1 += 1;
                }
                if helpful {
                    entry.2 += 1;
                }
            }
            _ => bad.push(row.sample_id.clone()),
        }
    }
    if !bad.is_empty() {
        return Err(EvalError::MissingAnnotation { row_ids: bad });
    }
    Ok(groups
        .into_iter()
        .map(
            |((task_id, model_id), (n, faithful, helpful))| HumanEvalSummary {
                task_id,
                model_id,
                rows: n,
                faithfulness: faithful as f64 / n as f64,
                helpfulness: helpful as f64 / n as f64,
            },
        )
        .collect())
}

/// Writes annotation rows as CSV.
pub fn write_annotation_csv<W: std::io::Write>(
    rows: &[AnnotationRow],
    writer: W,
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)
            .map_err(|e| EvalError::InvalidAnnotation(e.to_string()))?;
    }
    w.flush()
        .map_err(|e| EvalError::InvalidAnnotation(e.to_string()))
}

/// Reads annotation rows from CSV.
pub fn read_annotation_csv<R: std::io::Read>(reader: R) -> Result<Vec<AnnotationRow>, EvalError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.deserialize() {
        rows.push(record.map_err(|e| EvalError::InvalidAnnotation(e.to_string()))?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Prediction, StrategyKind};

    fn transcript(
        task: &str,
        model: &str,
        dataset: &str,
        example: &str,
        gold: &str,
        perm: usize,
    ) -> PipelineTranscript {
        PipelineTranscript {
            example_id: example.into(),
            example_text: format!("tweet {example}"),
            gold_label: gold.into(),
            task_id: task.into(),
            dataset_id: dataset.into(),
            language: "en".into(),
            model_id: model.into(),
            strategy: StrategyKind::GoalBased,
            permutation_index: perm,
            repetition: 0,
            temperature: 0.0,
            calls: vec![],
            knowledge_text: Some(format!("knowledge for {example}")),
            knowledge_cached: perm > 0,
            reasoning_text: "r".into(),
            final_answer_text: "a".into(),
            prediction: Prediction::Label(gold.into()),
            warnings: vec![],
            error: None,
        }
    }

    fn corpus(models: &[&str], per_label: usize) -> Vec<PipelineTranscript> {
        let mut out = Vec::new();
        for model in models {
            for i in 0..per_label {
                // Two labels, 50/50, two permutations each (dupes collapse).
                for perm in 0..2 {
                    out.push(transcript(
                        "intent",
                        model,
                        "lilac",
                        &format!("a{i}"),
                        "Help-seeking",
                        perm,
                    ));
                    out.push(transcript(
                        "intent",
                        model,
                        "lilac",
                        &format!("b{i}"),
                        "Help-offering",
                        perm,
                    ));
                }
            }
        }
        out
    }

    #[test]
    fn export_yields_per_model_rows() {
        let transcripts = corpus(&["m1", "m2", "m3"], 50);
        let rows = export_human_eval(&transcripts, 60, 7).unwrap();
        assert_eq!(rows.len(), 180);
        for model in ["m1", "m2", "m3"] {
            assert_eq!(rows.iter().filter(|r| r.model_id == model).count(), 60);
        }
        assert!(rows.iter().all(|r| !r.knowledge_text.is_empty()));
        assert!(rows
            .iter()
            .all(|r| r.faithfulness.is_empty() && r.helpfulness.is_empty()));
    }

    #[test]
    fn stratification_balanced_within_one() {
        let transcripts = corpus(&["m1"], 50);
        let rows = export_human_eval(&transcripts, 60, 7).unwrap();
        let seeking = rows
            .iter()
            .filter(|r| r.gold_label == "Help-seeking")
            .count();
        let offering = rows
            .iter()
            .filter(|r| r.gold_label == "Help-offering")
            .count();
        // 50/50 source split: exact proportionality is 30/30.
        assert!((seeking as i64 - 30).abs() <= 1, "{seeking}");
        assert!((offering as i64 - 30).abs() <= 1, "{offering}");
        assert_eq!(seeking + offering, 60);
    }

    #[test]
    fn export_deterministic_under_seed() {
        let transcripts = corpus(&["m1", "m2"], 40);
        let a = export_human_eval(&transcripts, 60, 99).unwrap();
        let b = export_human_eval(&transcripts, 60, 99).unwrap();
        assert_eq!(a, b);
        let c = export_human_eval(&transcripts, 60, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn insufficient_samples_rejected() {
        let transcripts = corpus(&["m1"], 10); // 20 unique examples < 60
        let err = export_human_eval(&transcripts, 60, 7).unwrap_err();
        assert!(matches!(err, EvalError::InsufficientSamples { .. }));
    }

    #[test]
    fn transcripts_without_knowledge_never_qualify() {
        let mut transcripts = corpus(&["m1"], 40);
        for t in transcripts.iter_mut().take(10) {
            t.knowledge_text = None;
        }
        let rows = export_human_eval(&transcripts, 60, 7).unwrap();
        assert_eq!(rows.len(), 60);
    }

    #[test]
    fn largest_remainder_properties() {
        let allocations = largest_remainder(&[128, 263], 60);
        assert_eq!(allocations.iter().sum::<usize>(), 60);
        // Quotas: 19.64 and 40.36.
        assert_eq!(allocations, vec![20, 40]);
        let quotas = [60.0 * 128.0 / 391.0, 60.0 * 263.0 / 391.0];
        for (a, q) in allocations.iter().zip(quotas) {
            assert!((*a as f64 - q).abs() < 1.0);
        }
    }

    #[test]
    fn import_counts_positive_fractions() {
        let transcripts = corpus(&["m1"], 50);
        let mut rows = export_human_eval(&transcripts, 60, 7).unwrap();
        for (i, row) in rows.iter_mut().enumerate() {
            row.faithfulness = if i == 0 { "0".into() } else { "1".into() };
            row.helpfulness = "yes".into();
        }
        let summaries = import_human_eval(&rows).unwrap();
        assert_eq!(summaries.len(), 1);
        let s = &summaries[0];
        assert_eq!(s.rows, 60);
        assert!((s.faithfulness - 59.0 / 60.0).abs() < 1e-12);
        assert_eq!(s.helpfulness, 1.0);
        // Table formatting (two decimals) renders 59/60 as 0.98.
        assert_eq!(format!("{:.2}", s.faithfulness), "0.98");
        assert_eq!(format!("{:.2}", s.helpfulness), "1.00");
    }

    #[test]
    fn import_rejects_blanks_listing_rows() {
        let transcripts = corpus(&["m1"], 50);
        let mut rows = export_human_eval(&transcripts, 60, 7).unwrap();
        for row in rows.iter_mut().skip(1) {
            row.faithfulness = "1".into();
            row.helpfulness = "0".into();
        }
        let err = import_human_eval(&rows).unwrap_err();
        match err {
            EvalError::MissingAnnotation { row_ids } => {
                assert_eq!(row_ids, vec![rows[0].sample_id.clone()]);
            }
            other => panic!("expected MissingAnnotation, got {other}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let transcripts = corpus(&["m1"], 40);
        let rows = export_human_eval(&transcripts, 60, 7).unwrap();
        let mut buf = Vec::new();
        write_annotation_csv(&rows, &mut buf).unwrap();
        let back = read_annotation_csv(buf.as_slice()).unwrap();
        assert_eq!(rows, back);
    }
}
