// SPDX-License-Identifier: Apache-2.0

//! Module/package dependency graphs, context pruning and token budgets.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::grammar::{count_tokens_lenient, NodeId, ParseTree};
use crate::sampler::TaskRecord;
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Module,
    Package,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub name: String,
    pub kind: UnitKind,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepKind {
    Instantiation,
    Import,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DepEdge {
    pub from: String,
    pub to: String,
    pub kind: DepKind,
    /// The target is not declared in the unit.
    pub external: bool,
}

/// Units in document order (disjoint spans) and deduplicated edges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub units: Vec<Unit>,
    pub edges: Vec<DepEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BudgetError {
    #[error("span {0} is not inside any module or package")]
    NoEnclosingUnit(Span),
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),
    #[error("tokenizer failed: {0}")]
    TokenizerFailure(String),
}

fn first_identifier(tree: &ParseTree, id: NodeId) -> Option<String> {
    tree.first_child_of_kind(id, "simple_identifier").map(|n| tree.text(n).to_string())
}

/// Extracts modules, packages and their instantiation/import edges.
///
/// Scoped references such as `pkg::NAME` count as imports of `pkg`.
pub fn build_dependency_graph(tree: &ParseTree) -> DependencyGraph {
    let mut units = Vec::new();
    let mut raw: BTreeSet<(usize, String, DepKind)> = BTreeSet::new();
    for id in tree.preorder() {
        let kind = match tree.kind(id) {
            "module_declaration" => UnitKind::Module,
            "package_declaration" => UnitKind::Package,
            _ => continue,
        };
        let Some(name) = first_identifier(tree, id) else { continue };
        let unit_idx = units.len();
        units.push(Unit { name, kind, span: tree.span(id) });
        for inst in tree.descendants_of_kind(id, "module_program_interface_instantiation") {
            if let Some(target) = first_identifier(tree, inst) {
                raw.insert((unit_idx, target, DepKind::Instantiation));
            }
        }
        for node in ["package_import_item", "package_scope"] {
            for item in tree.descendants_of_kind(id, node) {
                if let Some(target) = first_identifier(tree, item) {
                    raw.insert((unit_idx, target, DepKind::Import));
                }
            }
        }
    }
    let declared: BTreeSet<&str> = units.iter().map(|u| u.name.as_str()).collect();
    let mut edges: Vec<DepEdge> = raw
        .into_iter()
        .map(|(from, to, kind)| DepEdge {
            from: units[from].name.clone(),
            external: !declared.contains(to.as_str()),
            to,
            kind,
        })
        .collect();
    edges.sort();
    edges.dedup();
    DependencyGraph { units, edges }
}

impl DependencyGraph {
    pub fn unit(&self, name: &str) -> Option<&Unit> {
        self.units.iter().find(|u| u.name == name)
    }

    /// Declared units that `name` depends on directly.
    pub fn direct_deps(&self, name: &str) -> BTreeSet<&str> {
        self.edges.iter().filter(|e| e.from == name && !e.external).map(|e| e.to.as_str()).collect()
    }

    /// Units reachable from `home`, including `home`.
    pub fn closure(&self, home: &str, mode: ContextMode) -> BTreeSet<String> {
        let mut seen = BTreeSet::from([home.to_string()]);
        let mut queue = VecDeque::from([(home.to_string(), 0usize)]);
        while let Some((name, depth)) = queue.pop_front() {
            if mode == ContextMode::Direct && depth == 1 {
                continue;
            }
            for dep in self.direct_deps(&name) {
                if seen.insert(dep.to_string()) {
                    queue.push_back((dep.to_string(), depth + 1));
                }
            }
        }
        seen
    }
}

/// The unit whose span contains `span`.
pub fn enclosing_unit(graph: &DependencyGraph, span: Span) -> Result<&Unit, BudgetError> {
    graph.units.iter().find(|u| u.span.contains(span)).ok_or(BudgetError::NoEnclosingUnit(span))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    Direct,
    Transitive,
}

/// A pruned source plus the mapping from original to pruned offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedContext {
    pub text: String,
    /// Retained unit names in document order.
    pub units: Vec<String>,
    /// Kept original ranges, ascending, with their start in `text`.
    segments: Vec<(Span, usize)>,
}

impl PrunedContext {
    /// Maps an original span into the pruned text, if it was kept whole.
    pub fn remap(&self, span: Span) -> Option<Span> {
        self.segments.iter().find(|(orig, _)| orig.contains(span)).map(|(orig, new_start)| {
            let delta = new_start + span.start - orig.start;
            Span::new(delta, delta + span.len())
        })
    }
}

/// Keeps `home` and its dependencies in document order.
///
/// Each retained unit carries the text between it and the previous unit
/// (comments, blank lines); text after the last unit is kept when the last
/// unit is retained.
pub fn prune_context(
    text: &str,
    graph: &DependencyGraph,
    home: &str,
    mode: ContextMode,
) -> Result<PrunedContext, BudgetError> {
    if graph.unit(home).is_none() {
        return Err(BudgetError::UnknownUnit(home.to_string()));
    }
    let keep = graph.closure(home, mode);
    let mut out = PrunedContext { text: String::new(), units: Vec::new(), segments: Vec::new() };
    let mut prev_end = 0;
    let last = graph.units.len().saturating_sub(1);
    for (i, unit) in graph.units.iter().enumerate() {
        let start = prev_end;
        prev_end = unit.span.end;
        if !keep.contains(&unit.name) {
            continue;
        }
        let end = if i == last { text.len() } else { unit.span.end };
        let seg = Span::new(start, end);
        out.segments.push((seg, out.text.len()));
        out.text.push_str(seg.slice(text));
        out.units.push(unit.name.clone());
    }
    Ok(out)
}

/// Context-size measure used for budgeting.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> Result<usize, BudgetError>;
}

/// Counts grammar tokens; unlexable characters count one each.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexerTokenizer;

impl Tokenizer for LexerTokenizer {
    fn count(&self, text: &str) -> Result<usize, BudgetError> {
        Ok(count_tokens_lenient(text))
    }
}

/// Runs a command with the text on stdin; it must print one integer.
#[derive(Debug, Clone)]
pub struct CommandTokenizer {
    pub argv: Vec<String>,
}

impl Tokenizer for CommandTokenizer {
    fn count(&self, text: &str) -> Result<usize, BudgetError> {
        let fail = |m: String| BudgetError::TokenizerFailure(m);
        let (prog, args) = self.argv.split_first().ok_or_else(|| fail("empty command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("{prog}: {e}")))?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let input = text.to_string();
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        // a command that exits without reading its input is not an error
        let _ = writer.join();
        if !output.status.success() {
            return Err(fail(format!("{prog} exited with {}: {}", output.status, String::from_utf8_lossy(&output.stderr).trim())));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout.trim().parse().map_err(|_| fail(format!("expected an integer, got {:?}", stdout.trim())))
    }
}

/// Token count under the default tokenizer.
pub fn count_tokens(text: &str) -> usize {
    count_tokens_lenient(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooSmall,
    TooLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetVerdict {
    Accept { tokens: usize },
    Reject { reason: RejectReason, tokens: usize },
}

/// Accepts a task iff `min_tokens <= tokens(reference) <= max_tokens`.
pub fn enforce_budget(
    task: &TaskRecord,
    tokenizer: &dyn Tokenizer,
    min_tokens: usize,
    max_tokens: usize,
) -> Result<BudgetVerdict, BudgetError> {
    let tokens = tokenizer.count(&task.reference)?;
    Ok(budget_verdict(tokens, min_tokens, max_tokens))
}

pub fn budget_verdict(tokens: usize, min_tokens: usize, max_tokens: usize) -> BudgetVerdict {
    if tokens < min_tokens {
        BudgetVerdict::Reject { reason: RejectReason::TooSmall, tokens }
    } else if tokens > max_tokens {
        BudgetVerdict::Reject { reason: RejectReason::TooLarge, tokens }
    } else {
        BudgetVerdict::Accept { tokens }
    }
}

/// Module names ordered by how many units instantiate them; handy for
/// picking a default top (a module nobody instantiates).
pub fn roots(graph: &DependencyGraph) -> Vec<&str> {
    let mut indeg: BTreeMap<&str, usize> = graph
        .units
        .iter()
        .filter(|u| u.kind == UnitKind::Module)
        .map(|u| (u.name.as_str(), 0))
        .collect();
    for e in &graph.edges {
        if let Some(d) = indeg.get_mut(e.to.as_str()) {
            *d += 1;
        }
    }
    graph
        .units
        .iter()
        .filter(|u| indeg.get(u.name.as_str()) == Some(&0))
        .map(|u| u.name.as_str())
        .collect()
}
