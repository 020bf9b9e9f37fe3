// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rulemask::config::PipelineConfig;
use rulemask::evaluate::{evaluate_tasks, EvalOptions, ResultRow};
use rulemask::generate::{format_rule_table, load_corpus, rule_rows, run_generate};
use rulemask::report::{build_report, format_rule_task_stats, rule_task_stats};
use rulemask::{read_jsonl, to_jsonl};
use rulemask_core::prompt::PromptMode;
use rulemask_core::sampler::TaskRecord;
use rulemask_llm::transport::{RecordingTransport, ReplayTransport, Transport, UreqTransport};
use rulemask_llm::{load_model, Client, Model, ModelConfig};
use rulemask_verify::check::{CheckMode, EquivOptions};

#[derive(Parser)]
#[command(name = "rulemask", version, about = "Grammar-rule masking benchmarks for HDL code models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate rule-completion tasks from the configured sources.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write dropped and rejected tasks (JSON lines).
        #[arg(long)]
        rejections: Option<PathBuf>,
    },
    /// Query a model on every task and score the completions.
    Evaluate {
        #[arg(long)]
        tasks: PathBuf,
        /// `mock:oracle`, `mock:constant`, a profile file, or the name of a
        /// model listed in `--config`.
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "chat")]
        mode: PromptMode,
        #[arg(long)]
        out: PathBuf,
        /// Pipeline configuration supplying verifier settings and models.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Serve responses from a recording instead of the network.
        #[arg(long, conflicts_with = "record")]
        replay: Option<PathBuf>,
        /// Append every exchange with the endpoint to this file.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Unroll depth; overrides the configuration.
        #[arg(long)]
        k: Option<usize>,
        /// Per-check timeout in seconds; overrides the configuration.
        #[arg(long)]
        timeout: Option<f64>,
        /// External lint command with a `{file}` placeholder.
        #[arg(long)]
        lint: Option<String>,
        /// External equivalence command with `{reference}`, `{candidate}`,
        /// `{top}` and `{k}` placeholders.
        #[arg(long)]
        equiv: Option<String>,
    },
    /// Summarize result files.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Write the system x rule EQV matrix here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Task file, for ground-truth size statistics.
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Print per-rule occurrence statistics without generating tasks.
    Stats {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, rejections } => {
            let config = PipelineConfig::load(&config)?;
            let output = run_generate(&config)?;
            fs::write(&out, to_jsonl(&output.tasks)).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = rejections {
                fs::write(&path, to_jsonl(&output.rejections)).with_context(|| format!("writing {}", path.display()))?;
            }
            for r in &output.rejections {
                eprintln!("rejected {} ({}, {}:{}): {} {}", r.task_id, r.rule, r.origin.file, r.origin.line, r.stage, r.reason);
            }
            print!("{}", format_rule_table(&output.rules));
            println!("{} tasks written to {}, {} rejected", output.tasks.len(), out.display(), output.rejections.len());
            Ok(())
        }
        Command::Evaluate { tasks, model, mode, out, config, replay, record, jobs, k, timeout, lint, equiv } => {
            let pipeline = config.as_deref().map(PipelineConfig::load).transpose()?;
            let model_config = resolve_model(&model, pipeline.as_ref())?;
            let mut opts = EvalOptions { mode, jobs, ..Default::default() };
            if let Some(p) = &pipeline {
                opts.syntax = p.verifier.syntax.clone();
                opts.equivalence = p.verifier.equiv_options();
            }
            apply_overrides(&mut opts.equivalence, k, timeout, equiv)?;
            if let Some(command) = lint {
                opts.syntax = CheckMode::External { command };
            }
            let tasks: Vec<TaskRecord> = read_jsonl(&tasks)?;
            let backend = match model_config.mock_kind() {
                Some(kind) => Model::Mock(kind),
                None => Model::Remote(Client::new(transport(&model_config, replay.as_deref(), record.as_deref())?)),
            };
            let (rows, responses) = evaluate_tasks(&tasks, &model_config, &backend, &opts);
            fs::write(&out, to_jsonl(&rows)).with_context(|| format!("writing {}", out.display()))?;
            let responses_path = responses_file(&out);
            fs::write(&responses_path, to_jsonl(&responses))
                .with_context(|| format!("writing {}", responses_path.display()))?;
            print!("{}", build_report(&rows).summary_table());
            Ok(())
        }
        Command::Report { results, csv, tasks } => {
            let mut rows: Vec<ResultRow> = Vec::new();
            for path in &results {
                rows.extend(read_jsonl::<ResultRow>(path)?);
            }
            let task_records: Option<Vec<TaskRecord>> = tasks.as_deref().map(read_jsonl).transpose()?;
            if rows.is_empty() {
                eprintln!("warning: no result rows in {}", results.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
            }
            let report = build_report(&rows);
            print!("{}", report.summary_table());
            for line in report.best_configurations() {
                println!("{line}");
            }
            println!();
            print!("{}", report.matrix_table());
            println!();
            print!("{}", format_rule_task_stats(&rule_task_stats(&rows, task_records.as_deref())));
            if let Some(path) = csv {
                fs::write(&path, report.matrix_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Stats { config } => {
            let config = PipelineConfig::load(&config)?;
            let corpus = load_corpus(&config)?;
            print!("{}", format_rule_table(&rule_rows(&corpus, &[])));
            Ok(())
        }
    }
}

fn resolve_model(spec: &str, pipeline: Option<&PipelineConfig>) -> Result<ModelConfig> {
    if let Some(p) = pipeline {
        if let Some(m) = p.model_configs()?.into_iter().find(|m| m.name == spec) {
            return Ok(m);
        }
    }
    Ok(load_model(spec)?)
}

fn apply_overrides(opts: &mut EquivOptions, k: Option<usize>, timeout: Option<f64>, equiv: Option<String>) -> Result<()> {
    if let Some(k) = k {
        if k == 0 {
            bail!("--k must be at least 1");
        }
        opts.k = k;
    }
    if let Some(t) = timeout {
        opts.timeout = Duration::try_from_secs_f64(t).ok().filter(|d| !d.is_zero()).context("--timeout must be positive")?;
    }
    if let Some(command) = equiv {
        opts.mode = CheckMode::External { command };
    }
    Ok(())
}

fn transport(config: &ModelConfig, replay: Option<&Path>, record: Option<&Path>) -> Result<Box<dyn Transport>> {
    if let Some(path) = replay {
        let t = ReplayTransport::load(path).with_context(|| format!("loading {}", path.display()))?;
        return Ok(Box::new(t));
    }
    let live = UreqTransport::new(Duration::from_secs(config.request_timeout_s));
    Ok(match record {
        Some(path) => Box::new(RecordingTransport::create(live, path).with_context(|| format!("opening {}", path.display()))?),
        None => Box::new(live),
    })
}

/// Raw responses live beside the results: `results.jsonl` gets
/// `results.responses.jsonl`.
fn responses_file(out: &Path) -> PathBuf {
    out.with_extension("responses.jsonl")
}
