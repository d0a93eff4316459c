//! Command implementations behind the `kaze` binary. Kept as a library so
//! integration tests can drive commands in-process.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use kaze_core::config::{BackendKind, Config, Overrides};
use kaze_core::evaluation::human_eval::{read_annotation_csv, write_annotation_csv};
use kaze_core::evaluation::{
    call_budget, export_human_eval, import_human_eval, prepare_datasets, run_cross_model,
    run_experiment, run_salience_probe, EvalError, EvalReport, SalienceDistribution,
};
use kaze_core::ingest::load_dataset_with_stats;
use kaze_core::reporting;
use kaze_core::types::PipelineTranscript;

/// Exit code for per-example failures above the configured threshold.
pub const EXIT_FAILURES: i32 = 2;

/// Runs the configured experiment (and the cross-model ablation when
/// configured), writing reports under the output directory.
pub fn cmd_run(config_path: &Path, overrides: &Overrides, dry_run: bool) -> Result<i32> {
    let mut config = Config::load(config_path)?;
    config.apply_overrides(overrides)?;
    let plan = config.to_plan()?;
    let out_dir = config.experiment.output_dir.clone();

    if dry_run {
        let datasets = prepare_datasets(&plan)?;
        let lines = call_budget(&plan, &datasets);
        let model_width = lines
            .iter()
            .map(|l| l.model_id.len())
            .chain(std::iter::once("model".len()))
            .max()
            .unwrap_or(5);
        println!(
            "{:<model_width$} {:<12} {:<14} {:>9} {:>6} {:>5} {:>6} {:>10} {:>12}",
            "model",
            "dataset",
            "strategy",
            "examples",
            "perms",
            "reps",
            "temps",
            "budget",
            "with-cache"
        );
        let mut total = 0usize;
        let mut total_cached = 0usize;
        for l in &lines {
            println!(
                "{:<model_width$} {:<12} {:<14} {:>9} {:>6} {:>5} {:>6} {:>10} {:>12}",
                l.model_id,
                l.dataset_id,
                l.strategy.as_str(),
                l.examples,
                l.permutations,
                l.repetitions,
                l.temperatures,
                l.budget,
                l.with_cache
            );
            total += l.budget;
            total_cached += l.with_cache;
        }
        println!("total completions: {total} (with knowledge cache: {total_cached})");
        return Ok(0);
    }

    let gateway = config.build_gateway()?;
    let mut reports = run_experiment(&plan, &gateway, &out_dir)?;
    if plan.cross_model.is_some() {
        let cross = run_cross_model(&plan, &gateway, &out_dir)?;
        reports.extend(cross);
        reports.sort_by_key(|r| r.sort_key());
    }

    write_reports(&out_dir, &reports)?;
    println!(
        "wrote {} reports under {}",
        reports.len(),
        out_dir.display()
    );

    let failures: usize = reports.iter().map(|r| r.failures).sum();
    let attempted: usize = reports.iter().map(|r| r.scored + r.failures).sum();
    let rate = if attempted == 0 {
        0.0
    } else {
        failures as f64 / attempted as f64
    };
    if failures > 0 && rate > config.experiment.max_failure_rate {
        log::error!(
            "{failures}/{attempted} pipeline runs failed (rate {rate:.4} > threshold {})",
            config.experiment.max_failure_rate
        );
        return Ok(EXIT_FAILURES);
    }
    Ok(0)
}

/// Serializes reports and renders every table/CSV artifact from them.
pub fn write_reports(out_dir: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut json = serde_json::to_string_pretty(reports)?;
    json.push('\n');
    std::fs::write(out_dir.join("reports.json"), json)?;
    write_tables(out_dir, reports)
}

/// Renders the table/CSV artifacts without touching reports.json.
pub fn write_tables(out_dir: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    std::fs::write(
        out_dir.join("per_run_scores.csv"),
        reporting::render_per_run_scores(reports)?,
    )?;
    match reporting::render_main_table(reports) {
        Ok((text, csv)) => {
            std::fs::write(out_dir.join("main_table.txt"), text)?;
            std::fs::write(out_dir.join("main_table.csv"), csv)?;
        }
        Err(e) => log::warn!("skipping main table: {e}"),
    }
    match reporting::render_improvement_chart_data(reports) {
        Ok(csv) => std::fs::write(out_dir.join("improvements.csv"), csv)?,
        Err(e) => log::info!("skipping improvements.csv: {e}"),
    }
    match reporting::render_order_bias(reports) {
        Ok(csv) => std::fs::write(out_dir.join("order_bias.csv"), csv)?,
        Err(e) => log::info!("skipping order_bias.csv: {e}"),
    }
    match reporting::render_temperature_ablation(reports) {
        Ok(csv) => std::fs::write(out_dir.join("temperature_ablation.csv"), csv)?,
        Err(e) => log::info!("skipping temperature_ablation.csv: {e}"),
    }
    match reporting::render_cross_model(reports) {
        Ok(csv) => std::fs::write(out_dir.join("cross_model.csv"), csv)?,
        Err(e) => log::info!("skipping cross_model.csv: {e}"),
    }
    Ok(())
}

/// Runs the salience probe for every configured model.
pub fn cmd_probe(config_path: &Path, overrides: &Overrides) -> Result<i32> {
    let mut config = Config::load(config_path)?;
    config.apply_overrides(overrides)?;
    let probe = config.probe_config()?;
    let gateway = config.build_gateway()?;

    let mut distributions: Vec<SalienceDistribution> = Vec::new();
    for model in &config.experiment.models {
        let dist = run_salience_probe(&probe, model, &gateway)?;
        println!(
            "{}: dispositional {:.3}, situational {:.3}, both {:.3}, unclassified {:.3} ({} responses)",
            dist.model_id,
            dist.proportions[0],
            dist.proportions[1],
            dist.proportions[2],
            dist.proportions[3],
            dist.total
        );
        distributions.push(dist);
    }
    let out_dir = &config.experiment.output_dir;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("probe.csv"),
        reporting::render_probe(&distributions)?,
    )?;
    println!("wrote {}", out_dir.join("probe.csv").display());
    Ok(0)
}

/// Loads datasets named by a manifest (or full config) file and prints
/// class counts.
pub fn cmd_validate_data(path: &Path) -> Result<i32> {
    let manifests = kaze_core::config::load_manifests(path)?;
    if manifests.is_empty() {
        bail!("{} names no datasets", path.display());
    }
    for manifest in &manifests {
        let (examples, stats) = load_dataset_with_stats(&manifest.clone())?;
        println!(
            "{}: {}",
            manifest.dataset_id,
            stats.counts_line(manifest.remap)
        );
        println!(
            "  rows: {} input, {} kept, {} dropped",
            stats.input_rows,
            examples.len(),
            stats.dropped
        );
    }
    Ok(0)
}

fn collect_transcripts(dir: &Path) -> Result<Vec<PipelineTranscript>> {
    let mut transcripts = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in
            std::fs::read_dir(&current).with_context(|| format!("reading {}", current.display()))?
        {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
                let text = std::fs::read_to_string(&path)?;
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let t: PipelineTranscript = serde_json::from_str(line)
                        .with_context(|| format!("parsing {} line {}", path.display(), i + 1))?;
                    transcripts.push(t);
                }
            }
        }
    }
    Ok(transcripts)
}

/// Exports a stratified annotation sample from persisted transcripts.
pub fn cmd_human_eval_export(
    transcripts_dir: &Path,
    per_model: usize,
    seed: u64,
    out_file: &Path,
) -> Result<i32> {
    let transcripts = collect_transcripts(transcripts_dir)?;
    if transcripts.is_empty() {
        bail!("no transcripts found under {}", transcripts_dir.display());
    }
    let rows = export_human_eval(&transcripts, per_model, seed)?;
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::File::create(out_file)
        .with_context(|| format!("creating {}", out_file.display()))?;
    write_annotation_csv(&rows, file)?;
    println!(
        "wrote {} annotation rows to {}",
        rows.len(),
        out_file.display()
    );
    Ok(0)
}

/// Imports an annotated file and prints the quality table.
pub fn cmd_human_eval_import(file: &Path, out_dir: Option<&Path>) -> Result<i32> {
    let reader =
        std::fs::File::open(file).with_context(|| format!("opening {}", file.display()))?;
    let rows = read_annotation_csv(reader)?;
    match import_human_eval(&rows) {
        Ok(summaries) => {
            let (text, csv) = reporting::render_human_eval(&summaries)?;
            print!("{text}");
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("human_eval.csv"), csv)?;
            }
            Ok(0)
        }
        Err(EvalError::MissingAnnotation { row_ids }) => {
            eprintln!(
                "missing or non-binary annotations on {} rows:",
                row_ids.len()
            );
            for id in &row_ids {
                eprintln!("  {id}");
            }
            Ok(1)
        }
        Err(e) => Err(e.into()),
    }
}

/// Re-renders every table and CSV, either from the persisted reports file
/// or, with `from_transcripts`, rebuilt from the transcript files alone
/// (task definitions come from the config then).
pub fn cmd_report(
    out_dir: &Path,
    config_path: Option<&Path>,
    from_transcripts: bool,
) -> Result<i32> {
    if from_transcripts {
        let config_path = config_path
            .context("--config is required with --from-transcripts (task label sets)")?;
        let config = Config::load(config_path)?;
        let tasks = config.tasks()?;
        let transcripts = collect_transcripts(&out_dir.join("transcripts"))?;
        if transcripts.is_empty() {
            bail!(
                "no transcripts under {}",
                out_dir.join("transcripts").display()
            );
        }
        let reports = kaze_core::evaluation::reports_from_transcripts(&transcripts, &tasks)?;
        write_tables(out_dir, &reports)?;
        println!(
            "re-rendered tables from {} transcripts in {}",
            transcripts.len(),
            out_dir.display()
        );
        return Ok(0);
    }
    let path = out_dir.join("reports.json");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run an experiment first)", path.display()))?;
    let reports: Vec<EvalReport> = serde_json::from_str(&text)?;
    write_reports(out_dir, &reports)?;
    println!(
        "re-rendered tables from {} reports in {}",
        reports.len(),
        out_dir.display()
    );
    Ok(0)
}

/// Output directory from flags or config, for commands that need one.
pub fn resolve_output_dir(config_path: Option<&Path>, flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir.to_path_buf());
    }
    if let Some(path) = config_path {
        let config = Config::load(path)?;
        return Ok(config.experiment.output_dir);
    }
    bail!("either --output-dir or --config is required")
}

/// Maps the `--backend` flag onto the config enum.
pub fn backend_kind(name: &str) -> Result<BackendKind> {
    match name {
        "http" => Ok(BackendKind::Http),
        "replay" => Ok(BackendKind::Replay),
        "record" => Ok(BackendKind::Record),
        other => bail!("unknown backend `{other}` (expected http, replay, or record)"),
    }
}
