// SPDX-License-Identifier: Apache-2.0

//! Pipeline configuration: a TOML or JSON document.
//!
//! ```toml
//! sources = ["rtl/"]            # files, or directories scanned for *.v / *.sv
//! include_dirs = ["rtl/include"]
//! top = "soc_top"               # optional
//! rules = ["CONT", "ALWS"]      # acronyms or grammar rule names; default all nine
//! max_per_rule = 100
//! seed = 0
//!
//! [defines]
//! WIDTH = "8"
//!
//! [context]
//! mode = "direct"               # or "transitive"
//! min_tokens = 0
//! max_tokens = 32000
//! tokenizer = ["python3", "count.py"]   # optional; reads stdin, prints an integer
//!
//! [verifier]
//! k = 3
//! timeout_s = 30.0
//! liveness = true
//! syntax = { kind = "builtin" }
//! equivalence = { kind = "external", command = "eqy-wrapper {reference} {candidate} {top} {k}" }
//!
//! [[models]]
//! name = "local"
//! endpoint = "http://localhost:8000/v1"
//! ```
//!
//! Relative paths are resolved against the configuration file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use rulemask_core::budget::ContextMode;
use rulemask_core::grammar::{RuleCatalog, TABLE_RULES};
use rulemask_core::sampler::DEFAULT_PLACEHOLDER;
use rulemask_llm::{load_model, ModelConfig};
use rulemask_verify::check::{CheckMode, EquivOptions, DEFAULT_UNROLL};

use crate::PipelineError;

pub const DEFAULT_MAX_PER_RULE: usize = 100;
pub const DEFAULT_MAX_TOKENS: usize = 32_000;
/// Lower token bound of the large-core preset.
pub const LARGE_CORE_MIN_TOKENS: usize = 4_000;

const SOURCE_EXTENSIONS: [&str; 2] = ["v", "sv"];

fn default_rules() -> Vec<String> {
    TABLE_RULES.iter().map(|r| r.acronym.to_string()).collect()
}

fn default_max_per_rule() -> usize {
    DEFAULT_MAX_PER_RULE
}

fn default_placeholder() -> String {
    DEFAULT_PLACEHOLDER.to_string()
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

fn default_k() -> usize {
    DEFAULT_UNROLL
}

fn default_timeout_s() -> f64 {
    30.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sources: Vec<PathBuf>,
    #[serde(default)]
    pub defines: BTreeMap<String, String>,
    #[serde(default)]
    pub include_dirs: Vec<PathBuf>,
    #[serde(default)]
    pub top: Option<String>,
    #[serde(default = "default_rules")]
    pub rules: Vec<String>,
    #[serde(default = "default_max_per_rule")]
    pub max_per_rule: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_placeholder")]
    pub placeholder: String,
    #[serde(default)]
    pub context: ContextConfig,
    #[serde(default)]
    pub verifier: VerifierConfig,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    #[serde(default)]
    pub mode: ContextMode,
    #[serde(default)]
    pub min_tokens: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// External tokenizer command; the lexer token count when absent.
    #[serde(default)]
    pub tokenizer: Option<Vec<String>>,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig { mode: ContextMode::Direct, min_tokens: 0, max_tokens: DEFAULT_MAX_TOKENS, tokenizer: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    /// Drop tasks whose masked region provably never affects an output.
    #[serde(default = "yes")]
    pub liveness: bool,
    #[serde(default)]
    pub syntax: CheckMode,
    #[serde(default)]
    pub equivalence: CheckMode,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            k: DEFAULT_UNROLL,
            timeout_s: default_timeout_s(),
            liveness: true,
            syntax: CheckMode::Builtin,
            equivalence: CheckMode::Builtin,
        }
    }
}

impl VerifierConfig {
    pub fn equiv_options(&self) -> EquivOptions {
        EquivOptions {
            k: self.k,
            timeout: Duration::try_from_secs_f64(self.timeout_s).unwrap_or(Duration::MAX),
            mode: self.equivalence.clone(),
        }
    }
}

/// A model given inline or as a profile reference (`mock:oracle`, a file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Profile(String),
    Inline(ModelConfig),
}

impl PipelineConfig {
    /// Reads a configuration file; `.json` files are JSON, anything else TOML.
    /// Relative paths inside are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        config.rebase(path.parent().unwrap_or(Path::new("")));
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<PipelineConfig, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.sources.iter_mut().for_each(join);
        self.include_dirs.iter_mut().for_each(join);
        for m in &mut self.models {
            if let ModelEntry::Profile(p) = m {
                if !p.starts_with("mock:") && Path::new(p).is_relative() {
                    *p = base.join(&*p).display().to_string();
                }
            }
        }
    }

    /// Checks every invariant that can be checked without reading sources.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.selected_rules()?;
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.sources.is_empty() {
            return bad("no source files configured".into());
        }
        if self.max_per_rule == 0 {
            return bad("max_per_rule must be at least 1".into());
        }
        if self.context.min_tokens >= self.context.max_tokens {
            return bad(format!(
                "token bounds must satisfy min < max, got [{}, {}]",
                self.context.min_tokens, self.context.max_tokens
            ));
        }
        if self.context.tokenizer.as_ref().is_some_and(|t| t.is_empty()) {
            return bad("tokenizer command is empty".into());
        }
        if self.verifier.k == 0 {
            return bad("verifier.k must be at least 1".into());
        }
        if !(self.verifier.timeout_s.is_finite() && self.verifier.timeout_s > 0.0) {
            return bad(format!("verifier.timeout_s must be positive, got {}", self.verifier.timeout_s));
        }
        self.model_configs()?;
        Ok(())
    }

    /// Canonical grammar names of the configured rules.
    pub fn selected_rules(&self) -> Result<BTreeSet<String>, PipelineError> {
        if self.rules.is_empty() {
            return Err(PipelineError::Config("no rules selected".into()));
        }
        RuleCatalog::minihdl()
            .resolve_all(self.rules.iter().map(String::as_str))
            .map_err(PipelineError::UnknownRule)
    }

    pub fn model_configs(&self) -> Result<Vec<ModelConfig>, PipelineError> {
        self.models
            .iter()
            .map(|m| {
                let config = match m {
                    ModelEntry::Profile(spec) => load_model(spec)?,
                    ModelEntry::Inline(c) => c.clone(),
                };
                config.validate()?;
                Ok(config)
            })
            .collect()
    }

    /// Source files in order; directories contribute their HDL files sorted
    /// by name.
    pub fn source_files(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let mut files = Vec::new();
        for src in &self.sources {
            if src.is_dir() {
                let entries = std::fs::read_dir(src)
                    .map_err(|e| PipelineError::Config(format!("cannot list {}: {e}", src.display())))?;
                let mut found: Vec<PathBuf> = entries
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.is_file()
                            && p.extension().and_then(|e| e.to_str()).is_some_and(|e| SOURCE_EXTENSIONS.contains(&e))
                    })
                    .collect();
                found.sort();
                files.extend(found);
            } else {
                files.push(src.clone());
            }
        }
        if files.is_empty() {
            return Err(PipelineError::Config("the configured sources contain no HDL files".into()));
        }
        Ok(files)
    }
}
