use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use kaze_cli::{
    backend_kind, cmd_human_eval_export, cmd_human_eval_import, cmd_probe, cmd_report, cmd_run,
    cmd_validate_data, resolve_output_dir,
};
use kaze_core::config::Overrides;
use kaze_core::types::StrategyKind;

/// Batch harness for knowledge-augmented zero-shot prompting experiments.
#[derive(Parser)]
#[command(name = "kaze", version, about)]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Override the backend: http, replay, or record.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Override the worker/in-flight request bound.
    #[arg(long, global = true)]
    max_concurrency: Option<usize>,
    /// Print the full call budget without any network activity.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write reports.
    Run {
        /// Narrow the plan to these strategies.
        #[arg(long = "strategy")]
        strategies: Vec<StrategyKind>,
        /// Narrow the plan to these models (must appear in the config).
        #[arg(long = "model")]
        models: Vec<String>,
        /// Narrow the plan to these dataset ids.
        #[arg(long = "dataset")]
        datasets: Vec<String>,
    },
    /// Run the salience probe for every configured model.
    Probe,
    /// Load a dataset manifest (or config) and print class counts.
    ValidateData { manifest: PathBuf },
    /// Export or import human-evaluation annotation files.
    HumanEval {
        #[command(subcommand)]
        action: HumanEvalAction,
    },
    /// Re-render tables from persisted reports (or raw transcripts).
    Report {
        /// Rebuild scores from the transcript files instead of reports.json;
        /// needs --config for the task definitions.
        #[arg(long)]
        from_transcripts: bool,
    },
}

#[derive(Subcommand)]
enum HumanEvalAction {
    /// Draw a stratified annotation sample from persisted transcripts.
    Export {
        /// Transcript directory; defaults to <output-dir>/transcripts.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        /// Samples per (task, model) group.
        #[arg(long, default_value_t = 60)]
        per_model: usize,
        /// Output CSV; defaults to <output-dir>/human_eval_annotations.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate an annotated CSV into quality proportions.
    Import { file: PathBuf },
}

fn overrides_from(
    cli: &Cli,
    strategies: &[StrategyKind],
    models: &[String],
    datasets: &[String],
) -> Result<Overrides> {
    Ok(Overrides {
        output_dir: cli.output_dir.clone(),
        backend: cli.backend.as_deref().map(backend_kind).transpose()?,
        max_concurrency: cli.max_concurrency,
        seed: cli.seed,
        strategies: strategies.to_vec(),
        models: models.to_vec(),
        datasets: datasets.to_vec(),
    })
}

fn require_config(cli: &Cli) -> Result<&PathBuf> {
    match &cli.config {
        Some(path) => Ok(path),
        None => bail!("--config is required for this command"),
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run {
            strategies,
            models,
            datasets,
        } => {
            let config = require_config(cli)?;
            let overrides = overrides_from(cli, strategies, models, datasets)?;
            cmd_run(config, &overrides, cli.dry_run)
        }
        Command::Probe => {
            let config = require_config(cli)?;
            let overrides = overrides_from(cli, &[], &[], &[])?;
            cmd_probe(config, &overrides)
        }
        Command::ValidateData { manifest } => cmd_validate_data(manifest),
        Command::HumanEval { action } => match action {
            HumanEvalAction::Export {
                transcripts,
                per_model,
                out,
            } => {
                let transcripts_dir = match transcripts {
                    Some(dir) => dir.clone(),
                    None => resolve_output_dir(cli.config.as_deref(), cli.output_dir.as_deref())?
                        .join("transcripts"),
                };
                let out_file = match out {
                    Some(path) => path.clone(),
                    None => resolve_output_dir(cli.config.as_deref(), cli.output_dir.as_deref())?
                        .join("human_eval_annotations.csv"),
                };
                cmd_human_eval_export(
                    &transcripts_dir,
                    *per_model,
                    cli.seed.unwrap_or(0),
                    &out_file,
                )
            }
            HumanEvalAction::Import { file } => {
                let out_dir =
                    resolve_output_dir(cli.config.as_deref(), cli.output_dir.as_deref()).ok();
                cmd_human_eval_import(file, out_dir.as_deref())
            }
        },
        Command::Report { from_transcripts } => {
            let out_dir = resolve_output_dir(cli.config.as_deref(), cli.output_dir.as_deref())?;
            cmd_report(&out_dir, cli.config.as_deref(), *from_transcripts)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
