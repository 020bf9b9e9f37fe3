// SPDX-License-Identifier: Apache-2.0

//! Candidate sampling, masking and the dead-region filter.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grammar::{count_tokens_lenient, RuleCatalog, RuleOccurrence};
use crate::preprocess::Origin;
use crate::span::Span;

pub const DEFAULT_PLACEHOLDER: &str = "<<<RULE_MASK>>>";

/// The placeholder spelling shown to chat models.
pub const CHAT_MASK: &str = "<MASK>";

pub const FLAG_UNVERIFIABLE: &str = "unverifiable";

/// One rule-completion task. Serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub task_id: String,
    pub rule: String,
    pub mask_span: Span,
    pub ground_truth: String,
    pub masked_source: String,
    pub reference: String,
    pub origin: Origin,
    pub loc: usize,
    pub tokens: usize,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("placeholder {0:?} already occurs in the source")]
    PlaceholderCollision(String),
    #[error("placeholder must not be empty")]
    EmptyPlaceholder,
    #[error("span {span} is outside the {len}-byte source or splits a character")]
    SpanOutOfRange { span: Span, len: usize },
    #[error("task record is inconsistent: {0}")]
    Inconsistent(String),
}

impl TaskRecord {
    /// The placeholder text, recovered from the masked and reference sources.
    pub fn placeholder(&self) -> &str {
        let len = self.masked_source.len() + self.mask_span.len() - self.reference.len();
        &self.masked_source[self.mask_span.start..self.mask_span.start + len]
    }

    /// Splices `completion` in place of the placeholder.
    pub fn splice(&self, completion: &str) -> String {
        let ph_end = self.mask_span.start + self.placeholder().len();
        let mut out = String::with_capacity(self.reference.len() + completion.len());
        out.push_str(&self.masked_source[..self.mask_span.start]);
        out.push_str(completion);
        out.push_str(&self.masked_source[ph_end..]);
        out
    }

    /// The masked source with the placeholder rendered as `mask`.
    pub fn render_masked(&self, mask: &str) -> String {
        self.splice(mask)
    }

    /// Checks the record's structural invariants.
    pub fn validate(&self) -> Result<(), MaskError> {
        let bad = |m: &str| MaskError::Inconsistent(m.to_string());
        let s = self.mask_span;
        if self.reference.get(s.start..s.end) != Some(self.ground_truth.as_str()) {
            return Err(bad("ground_truth does not match reference at mask_span"));
        }
        let ph_len = (self.masked_source.len() + s.len())
            .checked_sub(self.reference.len())
            .ok_or_else(|| bad("masked_source is too short"))?;
        let ph = self
            .masked_source
            .get(s.start..s.start + ph_len)
            .ok_or_else(|| bad("placeholder is not at mask_span"))?;
        if ph.is_empty() || count_overlapping(&self.masked_source, ph) != 1 {
            return Err(bad("masked_source must contain exactly one placeholder"));
        }
        if self.splice(&self.ground_truth) != self.reference {
            return Err(bad("reinserting ground_truth does not reproduce reference"));
        }
        Ok(())
    }

    /// Re-masks the same region inside a pruned reference.
    pub fn rebased(&self, pruned: &str, span: Span) -> Result<TaskRecord, MaskError> {
        let occ = RuleOccurrence { rule_name: self.rule.clone(), span, node_path: Vec::new() };
        let mut task = mask(pruned, &occ, self.placeholder())?;
        task.origin = self.origin.clone();
        task.flags = self.flags.clone();
        Ok(task)
    }
}

/// Occurrences of `needle` in `hay`, including overlapping ones.
pub fn count_overlapping(hay: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    (0..hay.len()).filter(|&i| hay.as_bytes()[i..].starts_with(needle.as_bytes())).count()
}

/// Stable identifier: hash of reference text, span and rule.
pub fn task_id(reference: &str, span: Span, rule: &str) -> String {
    let mut h = Sha256::new();
    h.update((reference.len() as u64).to_le_bytes());
    h.update(reference.as_bytes());
    h.update((span.start as u64).to_le_bytes());
    h.update((span.end as u64).to_le_bytes());
    h.update(rule.as_bytes());
    hex::encode(&h.finalize()[..12])
}

/// Number of non-blank lines in `text`.
pub fn lines_of_code(text: &str) -> usize {
    text.lines().filter(|l| !l.trim().is_empty()).count()
}

/// One-based line of `offset` within `text`.
fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Masks one occurrence. The origin defaults to the line within `text`
/// under the file name `<unit>`.
pub fn mask(text: &str, occ: &RuleOccurrence, placeholder: &str) -> Result<TaskRecord, MaskError> {
    if placeholder.is_empty() {
        return Err(MaskError::EmptyPlaceholder);
    }
    let span = occ.span;
    let ground_truth = text
        .get(span.start..span.end)
        .ok_or(MaskError::SpanOutOfRange { span, len: text.len() })?;
    if text.contains(placeholder) {
        return Err(MaskError::PlaceholderCollision(placeholder.to_string()));
    }
    let masked_source = [&text[..span.start], placeholder, &text[span.end..]].concat();
    // the placeholder could overlap the bytes around the splice
    if count_overlapping(&masked_source, placeholder) != 1 {
        return Err(MaskError::PlaceholderCollision(placeholder.to_string()));
    }
    Ok(TaskRecord {
        task_id: task_id(text, span, &occ.rule_name),
        rule: occ.rule_name.clone(),
        mask_span: span,
        ground_truth: ground_truth.to_string(),
        masked_source,
        reference: text.to_string(),
        origin: Origin { file: "<unit>".to_string(), line: line_of(text, span.start) },
        loc: lines_of_code(ground_truth),
        tokens: count_tokens_lenient(ground_truth),
        flags: Vec::new(),
    })
}

fn rule_seed(seed: u64, rule: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(rule.as_bytes());
    h.finalize().into()
}

/// Selects at most `max_per_rule` occurrences per rule by seeded uniform
/// sampling without replacement.
///
/// Within a rule, selected spans never nest: when a later draw encloses
/// earlier picks, the enclosed picks are discarded and drawing continues.
/// The result is sorted by span start, then longer spans first, then rule.
pub fn sample(occurrences: &[RuleOccurrence], max_per_rule: usize, seed: u64) -> Vec<RuleOccurrence> {
    let max_per_rule = max_per_rule.max(1);
    let mut by_rule: BTreeMap<&str, Vec<&RuleOccurrence>> = BTreeMap::new();
    for occ in occurrences {
        by_rule.entry(&occ.rule_name).or_default().push(occ);
    }
    let mut out = Vec::new();
    for (rule, mut occs) in by_rule {
        // input order must not influence the draw
        occs.sort_by(|a, b| (a.span.start, b.span.end, &a.node_path).cmp(&(b.span.start, a.span.end, &b.node_path)));
        occs.dedup_by(|a, b| a.span == b.span);
        let mut rng = ChaCha8Rng::from_seed(rule_seed(seed, rule));
        occs.shuffle(&mut rng);
        let mut chosen: Vec<&RuleOccurrence> = Vec::new();
        for occ in occs {
            if chosen.len() == max_per_rule {
                break;
            }
            if chosen.iter().any(|c| c.span.contains(occ.span)) {
                continue;
            }
            chosen.retain(|c| !occ.span.overlaps(c.span) && !occ.span.contains(c.span));
            chosen.push(occ);
        }
        out.extend(chosen.into_iter().cloned());
    }
    out.sort_by(|a, b| {
        (a.span.start, std::cmp::Reverse(a.span.end), &a.rule_name).cmp(&(
            b.span.start,
            std::cmp::Reverse(b.span.end),
            &b.rule_name,
        ))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    pub rule_name: String,
    pub count: usize,
    pub avg_loc: f64,
    pub avg_tokens: f64,
}

/// Per-rule counts and mean sizes, ordered by rule name.
pub fn compute_stats(candidates: &[(RuleOccurrence, usize, usize)]) -> Vec<RuleStats> {
    let mut acc: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (occ, loc, tokens) in candidates {
        let e = acc.entry(&occ.rule_name).or_default();
        e.0 += 1;
        e.1 += loc;
        e.2 += tokens;
    }
    acc.into_iter()
        .map(|(rule, (n, loc, tok))| RuleStats {
            rule_name: rule.to_string(),
            count: n,
            avg_loc: loc as f64 / n as f64,
            avg_tokens: tok as f64 / n as f64,
        })
        .collect()
}

/// Outcome of an equivalence query made on behalf of the liveness filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleVerdict {
    Equivalent,
    Inequivalent,
    Unverifiable(String),
}

/// Formal equivalence of two designs with respect to the outputs of `top`.
pub trait EquivalenceOracle {
    fn check(&self, reference: &str, candidate: &str, top: &str) -> OracleVerdict;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Liveness {
    Keep,
    /// Kept, but the region's liveness could not be decided.
    KeepUnverifiable(String),
    /// The region provably does not affect any output.
    Drop(String),
}

/// Text that replaces a region to remove its behaviour, or `None` when the
/// rule is not deletable. Statement-position rules become a null statement
/// so the surrounding construct stays well formed.
pub fn neutralizer(rule: &str) -> Option<&'static str> {
    let info = RuleCatalog::info(rule).filter(|i| i.deletable)?;
    Some(match info.acronym {
        "COND" | "CASE" => ";",
        _ => "",
    })
}

/// Drops tasks whose masked region is dead code in `top`.
pub fn liveness_filter(task: &TaskRecord, top: &str, oracle: &dyn EquivalenceOracle) -> Liveness {
    let Some(replacement) = neutralizer(&task.rule) else {
        return Liveness::Keep;
    };
    let neutralized = task.splice(replacement);
    match oracle.check(&task.reference, &neutralized, top) {
        OracleVerdict::Equivalent => Liveness::Drop("dead".to_string()),
        OracleVerdict::Inequivalent => Liveness::Keep,
        OracleVerdict::Unverifiable(reason) => Liveness::KeepUnverifiable(reason),
    }
}
