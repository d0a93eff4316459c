//! Renders persisted results into table- and figure-shaped artifacts.
//!
//! Every rendered number is a pure view over the stored per-run values;
//! nothing here recomputes predictions. Text tables use one-decimal
//! percentages; CSVs keep full precision and carry a versioned schema
//! comment on their first line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::evaluation::{EvalReport, HumanEvalSummary, KnowledgeSource, SalienceDistribution};
use crate::metrics::{mean_std, relative_improvement};
use crate::types::StrategyKind;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no reports to render")]
    Empty,
    #[error(
        "no zero-cot baseline paired with `{strategy}` on (model `{model}`, dataset `{dataset}`)"
    )]
    UnpairedCell {
        model: String,
        dataset: String,
        strategy: String,
    },
}

const MISSING_CELL: &str = "\u{2014}"; // em dash

fn pct(mean: f64, std: f64) -> String {
    format!("{:.1}\u{00b1}{:.1}", mean * 100.0, std * 100.0)
}

/// "mono" for English datasets, "multi" otherwise.
fn lang_setting(language: &str) -> &'static str {
    if language == "en" || language.starts_with("en-") {
        "mono"
    } else {
        "multi"
    }
}

/// Main-table reports: self-generated knowledge at the lowest temperature
/// present (ablation temperatures render separately).
fn main_slice(reports: &[EvalReport]) -> Vec<&EvalReport> {
    let min_temp = reports
        .iter()
        .map(|r| r.temperature)
        .fold(f64::INFINITY, f64::min);
    reports
        .iter()
        .filter(|r| r.setting == KnowledgeSource::SelfModel && r.temperature == min_temp)
        .collect()
}

/// Picks the knowledge strategy shown in the "Ours" column of a cell:
/// the better-scoring one when both ran, context-based on an exact tie.
fn ours_of<'a>(cell: &BTreeMap<StrategyKind, &'a EvalReport>) -> Option<&'a EvalReport> {
    let context = cell.get(&StrategyKind::ContextBased);
    let goal = cell.get(&StrategyKind::GoalBased);
    match (context, goal) {
        (Some(c), Some(g)) => Some(if g.macro_f1_mean > c.macro_f1_mean {
            g
        } else {
            c
        }),
        (Some(c), None) => Some(c),
        (None, Some(g)) => Some(g),
        (None, None) => None,
    }
}

/// Renders the main results table: rows are (task, lang, dataset), column
/// groups per model hold Zero-CoT / Self-Debias / Ours as mean±std
/// percentages. The best cell per group is wrapped in `**`. Returns the
/// text table and a long-form CSV of the same cells.
pub fn render_main_table(reports: &[EvalReport]) -> Result<(String, String), ReportError> {
    let slice = main_slice(reports);
    if slice.is_empty() {
        return Err(ReportError::Empty);
    }

    let mut models: Vec<String> = slice.iter().map(|r| r.model_id.clone()).collect();
    models.sort();
    models.dedup();

    // (task, lang, dataset) -> model -> strategy -> report
    type TableRows<'a> = BTreeMap<
        (String, String, String),
        BTreeMap<String, BTreeMap<StrategyKind, &'a EvalReport>>,
    >;
    let mut rows: TableRows<'_> = BTreeMap::new();
    for r in &slice {
        rows.entry((r.task_id.clone(), r.language.clone(), r.dataset_id.clone()))
            .or_default()
            .entry(r.model_id.clone())
            .or_default()
            .insert(r.strategy, r);
    }

    let columns = ["Zero-CoT", "Self-Debias", "Ours"];
    let cell_width = 16usize;
    let group_width = cell_width * columns.len();

    let mut text = String::new();
    let _ = write!(text, "{:<10} {:<6} {:<12}", "Task", "Lang", "Dataset");
    for model in &models {
        let _ = write!(text, " | {model:<group_width$}");
    }
    text.push('\n');
    let _ = write!(text, "{:<10} {:<6} {:<12}", "", "", "");
    for _ in &models {
        let _ = write!(text, " | ");
        for c in columns {
            let _ = write!(text, "{c:<cell_width$}");
        }
    }
    text.push('\n');

    let mut csv = String::from("# schema: kaze.main_table.v1\n");
    csv.push_str("model,task,language,dataset,strategy,temperature,macro_f1_mean,macro_f1_std,runs,unparsed_rate,failures\n");

    for ((task, lang, dataset), per_model) in &rows {
        let _ = write!(text, "{task:<10} {lang:<6} {dataset:<12}");
        for model in &models {
            let _ = write!(text, " | ");
            let cells = per_model.get(model);
            let ours = cells.and_then(ours_of);
            let picks: [Option<&EvalReport>; 3] = [
                cells.and_then(|c| c.get(&StrategyKind::ZeroCot).copied()),
                cells.and_then(|c| c.get(&StrategyKind::SelfDebias).copied()),
                ours,
            ];
            let best = picks
                .iter()
                .flatten()
                .map(|r| r.macro_f1_mean)
                .fold(f64::NEG_INFINITY, f64::max);
            for pick in picks {
                let cell = match pick {
                    Some(r) => {
                        let value = pct(r.macro_f1_mean, r.macro_f1_std);
                        if r.macro_f1_mean == best {
                            format!("**{value}**")
                        } else {
                            value
                        }
                    }
                    None => MISSING_CELL.to_string(),
                };
                let _ = write!(text, "{cell:<cell_width$}");
            }
            for pick in picks.into_iter().flatten() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    pick.model_id,
                    pick.task_id,
                    pick.language,
                    pick.dataset_id,
                    pick.strategy.as_str(),
                    pick.temperature,
                    pick.macro_f1_mean,
                    pick.macro_f1_std,
                    pick.run_scores.len(),
                    pick.unparsed_rate,
                    pick.failures
                );
            }
        }
        text.push('\n');
    }
    Ok((text, csv))
}

/// Average relative improvement of the knowledge strategy over Zero-CoT,
/// per (model, task, lang-setting), averaged over datasets.
pub fn render_improvement_chart_data(reports: &[EvalReport]) -> Result<String, ReportError> {
    let slice = main_slice(reports);
    // (model, task, lang_setting) -> per-dataset improvements
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();

    let mut cells: BTreeMap<(String, String), BTreeMap<StrategyKind, &EvalReport>> =
        BTreeMap::new();
    for r in &slice {
        cells
            .entry((r.model_id.clone(), r.dataset_id.clone()))
            .or_default()
            .insert(r.strategy, r);
    }
    for ((model, dataset), cell) in &cells {
        let Some(ours) = ours_of(cell) else { continue };
        let zero = cell
            .get(&StrategyKind::ZeroCot)
            .ok_or_else(|| ReportError::UnpairedCell {
                model: model.clone(),
                dataset: dataset.clone(),
                strategy: ours.strategy.as_str().to_string(),
            })?;
        let improvement =
            relative_improvement(ours.macro_f1_mean * 100.0, zero.macro_f1_mean * 100.0).map_err(
                |_| ReportError::UnpairedCell {
                    model: model.clone(),
                    dataset: dataset.clone(),
                    strategy: "zero-cot baseline scored 0".into(),
                },
            )?;
        groups
            .entry((
                model.clone(),
                ours.task_id.clone(),
                lang_setting(&ours.language).to_string(),
            ))
            .or_default()
            .push(improvement);
    }
    if groups.is_empty() {
        return Err(ReportError::Empty);
    }

    let mut csv = String::from("# schema: kaze.improvements.v1\n");
    csv.push_str("model,task,lang_setting,datasets,mean_improvement_pct\n");
    for ((model, task, setting), improvements) in &groups {
        let mean = improvements.iter().sum::<f64>() / improvements.len() as f64;
        let _ = writeln!(
            csv,
            "{model},{task},{setting},{},{mean}",
            improvements.len()
        );
    }
    Ok(csv)
}

/// Std of macro-F1 across permutations for each report, per repetition,
/// then averaged over repetitions.
fn std_across_permutations(report: &EvalReport) -> f64 {
    let reps: Vec<usize> = {
        let mut r: Vec<usize> = report.run_scores.iter().map(|s| s.repetition).collect();
        r.sort_unstable();
        r.dedup();
        r
    };
    let mut stds = Vec::new();
    for rep in reps {
        let values: Vec<f64> = report
            .run_scores
            .iter()
            .filter(|s| s.repetition == rep)
            .map(|s| s.macro_f1)
            .collect();
        if let Ok((_, std)) = mean_std(&values) {
            stds.push(std);
        }
    }
    if stds.is_empty() {
        0.0
    } else {
        stds.iter().sum::<f64>() / stds.len() as f64
    }
}

/// Order-bias data: per (model, task, method), the mean over datasets of
/// the std of macro-F1 across permutations.
pub fn render_order_bias(reports: &[EvalReport]) -> Result<String, ReportError> {
    let slice = main_slice(reports);
    if slice.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut groups: BTreeMap<(String, String, &'static str), Vec<f64>> = BTreeMap::new();
    for r in &slice {
        groups
            .entry((r.model_id.clone(), r.task_id.clone(), r.strategy.as_str()))
            .or_default()
            .push(std_across_permutations(r));
    }
    let mut csv = String::from("# schema: kaze.order_bias.v1\n");
    csv.push_str("model,task,method,datasets,mean_std_across_permutations\n");
    for ((model, task, method), stds) in &groups {
        let mean = stds.iter().sum::<f64>() / stds.len() as f64;
        let _ = writeln!(csv, "{model},{task},{method},{},{mean}", stds.len());
    }
    Ok(csv)
}

/// Temperature-ablation data: one row per report cell, mean±std over the
/// varied axis at each temperature.
pub fn render_temperature_ablation(reports: &[EvalReport]) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut csv = String::from("# schema: kaze.temperature_ablation.v1\n");
    csv.push_str("model,task,dataset,strategy,temperature,axis,macro_f1_mean,macro_f1_std,runs\n");
    let mut sorted: Vec<&EvalReport> = reports
        .iter()
        .filter(|r| r.setting == KnowledgeSource::SelfModel)
        .collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    for r in sorted {
        let axis = match r.axis {
            crate::evaluation::VariedAxis::Permutations => "permutations",
            crate::evaluation::VariedAxis::Repetitions => "repetitions",
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{axis},{},{},{}",
            r.model_id,
            r.task_id,
            r.dataset_id,
            r.strategy.as_str(),
            r.temperature,
            r.macro_f1_mean,
            r.macro_f1_std,
            r.run_scores.len()
        );
    }
    Ok(csv)
}

/// Self/Cross comparison rows for the knowledge strategies.
pub fn render_cross_model(reports: &[EvalReport]) -> Result<String, ReportError> {
    let mut rows: Vec<&EvalReport> = reports
        .iter()
        .filter(|r| r.strategy.has_knowledge_step())
        .collect();
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut csv = String::from("# schema: kaze.cross_model.v1\n");
    csv.push_str(
        "task,dataset,model,knowledge_model,setting,strategy,macro_f1_mean,macro_f1_std\n",
    );
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.task_id,
            r.dataset_id,
            r.model_id,
            r.knowledge_model_id,
            r.setting.as_str(),
            r.strategy.as_str(),
            r.macro_f1_mean,
            r.macro_f1_std
        );
    }
    Ok(csv)
}

/// Human-evaluation table: proportions with two decimals, plus the CSV.
pub fn render_human_eval(summaries: &[HumanEvalSummary]) -> Result<(String, String), ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut sorted: Vec<&HumanEvalSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| (&a.task_id, &a.model_id).cmp(&(&b.task_id, &b.model_id)));

    let mut text = format!(
        "{:<10} {:<12} {:>12} {:>14}\n",
        "Task", "Model", "Helpfulness", "Faithfulness"
    );
    let mut csv = String::from("# schema: kaze.human_eval.v1\n");
    csv.push_str("task,model,rows,helpfulness,faithfulness\n");
    for s in sorted {
        let _ = writeln!(
            text,
            "{:<10} {:<12} {:>12.2} {:>14.2}",
            s.task_id, s.model_id, s.helpfulness, s.faithfulness
        );
        let _ = writeln!(
            csv,
            "{},{},{},{:.2},{:.2}",
            s.task_id, s.model_id, s.rows, s.helpfulness, s.faithfulness
        );
    }
    Ok((text, csv))
}

/// Salience-probe distributions, one row per model.
pub fn render_probe(distributions: &[SalienceDistribution]) -> Result<String, ReportError> {
    if distributions.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut sorted: Vec<&SalienceDistribution> = distributions.iter().collect();
    sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let mut csv = String::from("# schema: kaze.probe.v1\n");
    csv.push_str("model,dispositional,situational,both,unclassified,total,failures\n");
    for d in sorted {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            d.model_id,
            d.proportions[0],
            d.proportions[1],
            d.proportions[2],
            d.proportions[3],
            d.total,
            d.failures
        );
    }
    Ok(csv)
}

/// Raw per-(repetition, permutation) scores, the source data for the
/// improvement and order-bias figures.
pub fn render_per_run_scores(reports: &[EvalReport]) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut csv = String::from("# schema: kaze.per_run_scores.v1\n");
    csv.push_str(
        "model,task,dataset,strategy,setting,temperature,repetition,permutation_index,macro_f1\n",
    );
    for r in sorted {
        for s in &r.run_scores {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                r.model_id,
                r.task_id,
                r.dataset_id,
                r.strategy.as_str(),
                r.setting.as_str(),
                r.temperature,
                s.repetition,
                s.permutation_index,
                s.macro_f1
            );
        }
    }
    Ok(csv)
}
