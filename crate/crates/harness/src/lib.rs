// SPDX-License-Identifier: Apache-2.0

//! Benchmark orchestration: task generation from HDL sources, model
//! evaluation over task files, and score reporting.

pub mod config;
pub mod evaluate;
pub mod generate;
pub mod report;

use std::fmt;

pub use config::PipelineConfig;
pub use evaluate::{evaluate_tasks, EvalOptions, ResultRow};
pub use generate::{run_generate, GenerateOutput};
pub use report::{build_report, EvalReport};

/// Pipeline stage that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    Parse,
    Enumerate,
    Mask,
    Liveness,
    Prune,
    Budget,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Preprocess => "preprocess",
            Stage::Parse => "parse",
            Stage::Enumerate => "enumerate",
            Stage::Mask => "mask",
            Stage::Liveness => "liveness",
            Stage::Prune => "prune",
            Stage::Budget => "budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("configuration: unknown rule {0:?}")]
    UnknownRule(String),
    #[error("model profile: {0}")]
    Model(#[from] rulemask_llm::LlmError),
    #[error("[{stage}] {message}")]
    Stage { stage: Stage, message: String },
    #[error("{path}:{line}: schema error: {message}")]
    Schema { path: String, line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

impl PipelineError {
    pub(crate) fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
        move |e| PipelineError::Stage { stage, message: e.to_string() }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

/// Reads a JSON-lines file into records, reporting the first bad line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<Vec<T>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> Result<Vec<T>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Schema { path: name.to_string(), line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// One compact JSON object per line, each line newline-terminated.
pub fn to_jsonl<T: serde::Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}
