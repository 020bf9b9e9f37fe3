// SPDX-License-Identifier: Apache-2.0

//! Model evaluation: prompt, generate, extract, reinsert and score.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rulemask_core::budget::{build_dependency_graph, enclosing_unit};
use rulemask_core::grammar::parse_source;
use rulemask_core::prompt::{build_prompt, ChatTemplate, PromptMode};
use rulemask_core::sampler::{TaskRecord, FLAG_UNVERIFIABLE};
use rulemask_llm::{extract_code, ApiMode, Model, ModelConfig};
use rulemask_verify::check::{check_equivalence, check_syntax, reinsert, CheckMode, EquivOptions, Eqv, Stx};

/// Added to a row whose equivalence check ran out of time.
pub const FLAG_TIMEOUT: &str = "timeout";

/// One scored completion. Serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub task_id: String,
    pub model: String,
    pub mode: PromptMode,
    pub stx: Stx,
    pub eqv: Eqv,
    pub flags: Vec<String>,
    /// Absent when no response was received.
    pub latency_ms: Option<u64>,
    /// Key of the raw response in the responses file.
    pub response_ref: Option<String>,
    pub rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRow {
    pub fn stx_pass(&self) -> bool {
        self.stx.passed()
    }

    /// Equivalence only counts when the syntax check passed too.
    pub fn eqv_pass(&self) -> bool {
        self.stx.passed() && self.eqv.passed()
    }

    pub fn unverifiable(&self) -> bool {
        matches!(self.eqv, Eqv::Unverifiable { .. }) || self.flags.iter().any(|f| f == FLAG_UNVERIFIABLE)
    }
}

/// Raw model output, stored beside the results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub response_ref: String,
    pub task_id: String,
    pub model: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mode: PromptMode,
    pub template: ChatTemplate,
    pub syntax: CheckMode,
    pub equivalence: EquivOptions,
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: PromptMode::Chat,
            template: ChatTemplate::default(),
            syntax: CheckMode::Builtin,
            equivalence: EquivOptions::default(),
            jobs: 0,
        }
    }
}

pub fn response_ref(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..12])
}

/// The module a task is scored against: the unit enclosing the mask in the
/// task's reference.
pub fn evaluation_top(task: &TaskRecord) -> Result<String, String> {
    let tree = parse_source(&task.reference).map_err(|e| format!("reference does not parse: {e}"))?;
    let graph = build_dependency_graph(&tree);
    enclosing_unit(&graph, task.mask_span).map(|u| u.name.clone()).map_err(|e| e.to_string())
}

fn api_mode(mode: PromptMode) -> ApiMode {
    match mode {
        PromptMode::Chat => ApiMode::Chat,
        PromptMode::Fim => ApiMode::Completion,
    }
}

/// Scores one task. Failures before scoring are recorded in the row.
pub fn evaluate_task(task: &TaskRecord, config: &ModelConfig, model: &Model, opts: &EvalOptions) -> (ResultRow, Option<ResponseRecord>) {
    let mut row = ResultRow {
        task_id: task.task_id.clone(),
        model: config.name.clone(),
        mode: opts.mode,
        stx: Stx::Fail { diagnostic: String::new() },
        eqv: Eqv::Skipped,
        flags: task.flags.clone(),
        latency_ms: None,
        response_ref: None,
        rule: task.rule.clone(),
        error: None,
    };
    let fail = |mut row: ResultRow, what: String| {
        row.stx = Stx::Fail { diagnostic: what.clone() };
        row.error = Some(what);
        row
    };
    let fim = config.fim_tokens();
    let bundle = match build_prompt(task, opts.mode, &opts.template, fim.as_ref()) {
        Ok(b) => b,
        Err(e) => return (fail(row, format!("prompt: {e}")), None),
    };
    let generation = match model.generate(task, &bundle, config) {
        Ok(g) => g,
        Err(e) => return (fail(row, format!("generate: {e}")), None),
    };
    let reference = response_ref(&generation.text);
    row.latency_ms = Some(generation.latency_ms);
    row.response_ref = Some(reference.clone());
    let response = ResponseRecord {
        response_ref: reference,
        task_id: task.task_id.clone(),
        model: config.name.clone(),
        text: generation.text.clone(),
    };
    let code = match extract_code(&generation.text, api_mode(opts.mode), &config.stop_tokens()) {
        Ok(c) => c,
        Err(e) => return (fail(row, format!("extract: {e}")), Some(response)),
    };
    let candidate = reinsert(task, &code);
    row.stx = check_syntax(&candidate, &opts.syntax);
    if row.stx.passed() {
        row.eqv = match evaluation_top(task) {
            Ok(top) => check_equivalence(&task.reference, &candidate, &top, &opts.equivalence),
            Err(reason) => Eqv::Unverifiable { reason },
        };
    }
    if let Eqv::Unverifiable { reason } = &row.eqv {
        if reason == "timeout" {
            row.flags.push(FLAG_TIMEOUT.to_string());
        }
        if !row.flags.iter().any(|f| f == FLAG_UNVERIFIABLE) {
            row.flags.push(FLAG_UNVERIFIABLE.to_string());
        }
    }
    (row, Some(response))
}

/// Scores every task on a bounded worker pool; rows come back in task order.
pub fn evaluate_tasks(
    tasks: &[TaskRecord],
    config: &ModelConfig,
    model: &Model,
    opts: &EvalOptions,
) -> (Vec<ResultRow>, Vec<ResponseRecord>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build().expect("thread pool");
    let scored: Vec<_> = pool.install(|| tasks.par_iter().map(|t| evaluate_task(t, config, model, opts)).collect());
    let mut rows = Vec::with_capacity(scored.len());
    // identical responses share one record
    let mut responses = BTreeMap::new();
    for (row, response) in scored {
        if let Some(r) = response {
            responses.entry((r.response_ref.clone(), r.task_id.clone())).or_insert(r);
        }
        rows.push(row);
    }
    (rows, responses.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rulemask_core::grammar::RuleOccurrence;
    use rulemask_core::sampler::mask;
    use rulemask_core::Span;
    use rulemask_llm::MockKind;

    fn task(src: &str, needle: &str, rule: &str) -> TaskRecord {
        let start = src.find(needle).unwrap();
        let occ = RuleOccurrence { rule_name: rule.into(), span: Span::new(start, start + needle.len()), node_path: vec![] };
        mask(src, &occ, "<<<M>>>").unwrap()
    }

    fn run(kind: MockKind, t: &TaskRecord, mode: PromptMode) -> ResultRow {
        let config = ModelConfig::mock(kind);
        let opts = EvalOptions { mode, ..Default::default() };
        evaluate_task(t, &config, &Model::Mock(kind), &opts).0
    }

    #[test]
    fn oracle_and_constant_mocks() {
        let src = "module m(input a, output y);\n  assign y = !a;\nendmodule\n";
        let t = task(src, "assign y = !a;", "continuous_assignment");
        for mode in [PromptMode::Chat, PromptMode::Fim] {
            let row = run(MockKind::Oracle, &t, mode);
            assert!(row.eqv_pass(), "{row:?}");
            assert_eq!(row.latency_ms, Some(0));
            let row = run(MockKind::Constant, &t, mode);
            assert!(row.stx_pass());
            assert!(matches!(row.eqv, Eqv::Inequivalent { .. }));
        }
        // a constant-zero ground truth is matched by the constant mock
        let zero = task("module m(input a, output y);\n  assign y = 1'b0;\nendmodule\n", "assign y = 1'b0;", "continuous_assignment");
        assert!(run(MockKind::Constant, &zero, PromptMode::Chat).eqv_pass());
    }

    #[test]
    fn syntax_failure_skips_equivalence() {
        let src = "module m(input a, output y);\n  assign y = !a;\nendmodule\n";
        let row = run(MockKind::Constant, &task(src, "!a", "expression"), PromptMode::Chat);
        assert!(!row.stx_pass());
        assert_eq!(row.eqv, Eqv::Skipped);
        assert!(!row.eqv_pass());
    }

    #[test]
    fn unverifiable_references_are_flagged() {
        let src = "module m(input [1:0] a, output y);\n  assign y = a[0] === 1'bx;\nendmodule\n";
        let row = run(MockKind::Oracle, &task(src, "a[0]", "expression"), PromptMode::Chat);
        assert!(row.stx_pass());
        assert!(matches!(row.eqv, Eqv::Unverifiable { .. }), "{row:?}");
        assert!(row.unverifiable());
    }

    #[test]
    fn rows_round_trip() {
        let src = "module m(input a, output y);\n  assign y = !a;\nendmodule\n";
        let row = run(MockKind::Constant, &task(src, "assign y = !a;", "continuous_assignment"), PromptMode::Chat);
        let line = serde_json::to_string(&row).unwrap();
        assert!(line.starts_with(r#"{"task_id":"#), "{line}");
        assert_eq!(serde_json::from_str::<ResultRow>(&line).unwrap(), row);
    }
}
