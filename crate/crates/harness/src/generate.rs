// SPDX-License-Identifier: Apache-2.0

//! Task generation: preprocess, parse, enumerate, sample, mask, filter dead
//! regions, prune context and enforce token budgets.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rulemask_core::budget::{
    build_dependency_graph, enclosing_unit, enforce_budget, prune_context, BudgetVerdict, CommandTokenizer, ContextMode,
    DependencyGraph, LexerTokenizer, PrunedContext, RejectReason, Tokenizer,
};
use rulemask_core::grammar::{count_tokens_lenient, find_rule_occurrences, parse_source, Grammar, RuleCatalog, RuleOccurrence};
use rulemask_core::preprocess::{preprocess, Origin};
use rulemask_core::sampler::{
    compute_stats, lines_of_code, liveness_filter, mask, sample, Liveness, TaskRecord, FLAG_UNVERIFIABLE,
};
use rulemask_verify::check::{BuiltinOracle, CheckMode};
use rulemask_verify::elab::elaborate;

use crate::config::PipelineConfig;
use crate::{PipelineError, Stage};

/// A sampled task that did not make it into the output, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub task_id: String,
    pub rule: String,
    pub origin: Origin,
    /// `liveness` or `budget`.
    pub stage: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<usize>,
}

/// Per-rule counts: all occurrences, and size means over the sampled ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRow {
    pub acronym: String,
    pub rule_name: String,
    pub occurrences: usize,
    pub sampled: usize,
    pub avg_loc: f64,
    pub avg_tokens: f64,
    /// Tasks written after filtering.
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutput {
    pub tasks: Vec<TaskRecord>,
    pub rules: Vec<RuleRow>,
    pub rejections: Vec<Rejection>,
}

/// The parsed corpus and its sampled occurrences, shared by `generate` and
/// `stats`.
pub struct Corpus {
    pub unit: rulemask_core::preprocess::SourceUnit,
    pub graph: DependencyGraph,
    pub rules: BTreeSet<String>,
    pub occurrences: Vec<RuleOccurrence>,
    pub sampled: Vec<RuleOccurrence>,
}

pub fn load_corpus(config: &PipelineConfig) -> Result<Corpus, PipelineError> {
    let rules = config.selected_rules()?;
    let files = config.source_files()?;
    let unit = preprocess(&files, &config.defines, &config.include_dirs).map_err(PipelineError::at(Stage::Preprocess))?;
    let tree = parse_source(&unit.text).map_err(PipelineError::at(Stage::Parse))?;
    let occurrences =
        find_rule_occurrences(&tree, &Grammar::minihdl(), &rules).map_err(PipelineError::at(Stage::Enumerate))?;
    let graph = build_dependency_graph(&tree);
    if let Some(top) = &config.top {
        if graph.unit(top).is_none() {
            return Err(PipelineError::Config(format!("top module {top:?} is not declared in the sources")));
        }
    }
    let sampled = sample(&occurrences, config.max_per_rule, config.seed);
    Ok(Corpus { unit, graph, rules, occurrences, sampled })
}

/// Per-rule table over the selected rules, in catalog order; rules without
/// occurrences get a zero row.
pub fn rule_rows(corpus: &Corpus, tasks: &[TaskRecord]) -> Vec<RuleRow> {
    let sized: Vec<(RuleOccurrence, usize, usize)> = corpus
        .sampled
        .iter()
        .map(|o| {
            let text = o.span.slice(&corpus.unit.text);
            (o.clone(), lines_of_code(text), count_tokens_lenient(text))
        })
        .collect();
    let stats: BTreeMap<String, _> = compute_stats(&sized).into_iter().map(|s| (s.rule_name.clone(), s)).collect();
    let mut rows: Vec<RuleRow> = corpus
        .rules
        .iter()
        .map(|rule| {
            let s = stats.get(rule);
            RuleRow {
                acronym: RuleCatalog::acronym(rule).unwrap_or(rule).to_string(),
                rule_name: rule.clone(),
                occurrences: corpus.occurrences.iter().filter(|o| &o.rule_name == rule).count(),
                sampled: s.map_or(0, |s| s.count),
                avg_loc: s.map_or(0.0, |s| s.avg_loc),
                avg_tokens: s.map_or(0.0, |s| s.avg_tokens),
                tasks: tasks.iter().filter(|t| &t.rule == rule).count(),
            }
        })
        .collect();
    let order = |r: &RuleRow| {
        rulemask_core::grammar::TABLE_RULES.iter().position(|t| t.name == r.rule_name).unwrap_or(usize::MAX)
    };
    rows.sort_by(|a, b| (order(a), &a.rule_name).cmp(&(order(b), &b.rule_name)));
    rows
}

fn tokenizer(config: &PipelineConfig) -> Box<dyn Tokenizer> {
    match &config.context.tokenizer {
        Some(argv) => Box::new(CommandTokenizer { argv: argv.clone() }),
        None => Box::new(LexerTokenizer),
    }
}

/// Module whose outputs decide liveness: the configured top when the home
/// unit lies in its hierarchy, the home unit otherwise.
fn liveness_top<'a>(config: &'a PipelineConfig, graph: &DependencyGraph, home: &'a str) -> &'a str {
    match &config.top {
        Some(top) if graph.closure(top, ContextMode::Transitive).contains(home) => top,
        _ => home,
    }
}

/// Runs the whole generation pipeline. The result is a pure function of the
/// configuration and the source files.
pub fn run_generate(config: &PipelineConfig) -> Result<GenerateOutput, PipelineError> {
    config.validate()?;
    let tokenizer = tokenizer(config);
    let corpus = load_corpus(config)?;

    let mut masked = Vec::with_capacity(corpus.sampled.len());
    for occ in &corpus.sampled {
        let mut task = mask(&corpus.unit.text, occ, &config.placeholder).map_err(PipelineError::at(Stage::Mask))?;
        task.origin = corpus.unit.locate(occ.span.start).map_err(PipelineError::at(Stage::Mask))?;
        let home = enclosing_unit(&corpus.graph, occ.span).map_err(PipelineError::at(Stage::Prune))?.name.clone();
        masked.push((task, home));
    }

    let mut rejections = Vec::new();
    let reject = |task: &TaskRecord, stage: Stage, reason: String, tokens: Option<usize>| Rejection {
        task_id: task.task_id.clone(),
        rule: task.rule.clone(),
        origin: task.origin.clone(),
        stage: stage.to_string(),
        reason,
        tokens,
    };

    let live: Vec<Liveness> = if config.verifier.liveness {
        let oracle = BuiltinOracle { options: config.verifier.equiv_options() };
        masked.par_iter().map(|(task, home)| liveness_filter(task, liveness_top(config, &corpus.graph, home), &oracle)).collect()
    } else {
        vec![Liveness::Keep; masked.len()]
    };
    let mut kept = Vec::new();
    for ((mut task, home), verdict) in masked.into_iter().zip(live) {
        match verdict {
            Liveness::Keep => {}
            Liveness::KeepUnverifiable(reason) => {
                tracing::debug!(task = %task.task_id, %reason, "liveness undecided");
                task.flags.push(FLAG_UNVERIFIABLE.to_string());
            }
            Liveness::Drop(reason) => {
                rejections.push(reject(&task, Stage::Liveness, reason, None));
                continue;
            }
        }
        kept.push((task, home));
    }

    let mut contexts: BTreeMap<String, (PrunedContext, bool)> = BTreeMap::new();
    let mut tasks = Vec::new();
    for (task, home) in kept {
        if !contexts.contains_key(&home) {
            let pruned =
                prune_context(&corpus.unit.text, &corpus.graph, &home, config.context.mode).map_err(PipelineError::at(Stage::Prune))?;
            let tree = parse_source(&pruned.text)
                .map_err(|e| PipelineError::Stage { stage: Stage::Prune, message: format!("pruned context of {home} does not parse: {e}") })?;
            // only the builtin checker's limits are known here
            let verifiable = !matches!(config.verifier.equivalence, CheckMode::Builtin)
                || elaborate(&tree, &home, &BTreeMap::new()).is_ok();
            contexts.insert(home.clone(), (pruned, verifiable));
        }
        let (pruned, verifiable) = &contexts[&home];
        let span = pruned.remap(task.mask_span).ok_or_else(|| PipelineError::Stage {
            stage: Stage::Prune,
            message: format!("task {} lies outside the retained context of {home}", task.task_id),
        })?;
        let mut rebased = task.rebased(&pruned.text, span).map_err(PipelineError::at(Stage::Prune))?;
        if !verifiable && !rebased.flags.iter().any(|f| f == FLAG_UNVERIFIABLE) {
            rebased.flags.push(FLAG_UNVERIFIABLE.to_string());
        }
        match enforce_budget(&rebased, tokenizer.as_ref(), config.context.min_tokens, config.context.max_tokens)
            .map_err(PipelineError::at(Stage::Budget))?
        {
            BudgetVerdict::Accept { .. } => tasks.push(rebased),
            BudgetVerdict::Reject { reason, tokens } => {
                let reason = match reason {
                    RejectReason::TooSmall => "too_small",
                    RejectReason::TooLarge => "too_large",
                };
                rejections.push(reject(&rebased, Stage::Budget, reason.to_string(), Some(tokens)));
            }
        }
    }
    let rules = rule_rows(&corpus, &tasks);
    Ok(GenerateOutput { tasks, rules, rejections })
}

/// Fixed-width table of rule rows.
pub fn format_rule_table(rows: &[RuleRow]) -> String {
    let mut out = format!(
        "{:<6} {:<40} {:>11} {:>8} {:>8} {:>10} {:>6}\n",
        "rule", "grammar rule", "occurrences", "sampled", "avg_loc", "avg_tokens", "tasks"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<6} {:<40} {:>11} {:>8} {:>8.2} {:>10.2} {:>6}\n",
            r.acronym, r.rule_name, r.occurrences, r.sampled, r.avg_loc, r.avg_tokens, r.tasks
        ));
    }
    out
}
