// SPDX-License-Identifier: Apache-2.0

//! Rooted ordered parse trees over a source text.
//!
//! Nodes live in a flat arena stored in preorder, so node 0 is the root and
//! iterating the arena visits nodes in document order.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Grammar;
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub kind: Arc<str>,
    pub span: Span,
    pub terminal: bool,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    source: Arc<str>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleOccurrence {
    pub rule_name: String,
    pub span: Span,
    pub node_path: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
    #[error("tree document does not match the import schema: {0}")]
    Schema(String),
    #[error("span violation at node path {path:?}: {reason}")]
    Span { path: Vec<u32>, reason: String },
}

/// Incremental construction of a tree whose nodes are created bottom-up.
///
/// `finish` renumbers the arena into preorder.
#[derive(Debug, Default)]
pub struct TreeBuilder {
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn terminal(&mut self, kind: impl Into<Arc<str>>, span: Span) -> NodeId {
        self.push(Node { kind: kind.into(), span, terminal: true, children: Vec::new() })
    }

    /// Non-terminal spanning its children. With no children the node is an
    /// empty rule at `fallback`.
    pub fn rule(&mut self, kind: impl Into<Arc<str>>, children: Vec<NodeId>, fallback: usize) -> NodeId {
        let span = match (children.first(), children.last()) {
            (Some(first), Some(last)) => {
                Span::new(self.nodes[first.index()].span.start, self.nodes[last.index()].span.end)
            }
            _ => Span::empty(fallback),
        };
        self.push(Node { kind: kind.into(), span, terminal: false, children })
    }

    pub fn span(&self, id: NodeId) -> Span {
        self.nodes[id.index()].span
    }

    pub fn kind(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].kind
    }

    fn push(&mut self, node: Node) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(node);
        id
    }

    pub fn finish(self, root: NodeId, source: Arc<str>) -> ParseTree {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            order.push(id);
            stack.extend(self.nodes[id.index()].children.iter().rev().copied());
        }
        let mut remap = vec![u32::MAX; self.nodes.len()];
        for (new, old) in order.iter().enumerate() {
            remap[old.index()] = new as u32;
        }
        let mut old_nodes: Vec<Option<Node>> = self.nodes.into_iter().map(Some).collect();
        let nodes = order
            .iter()
            .map(|old| {
                let mut n = old_nodes[old.index()].take().expect("node reachable twice");
                for c in &mut n.children {
                    *c = NodeId(remap[c.index()]);
                }
                n
            })
            .collect();
        ParseTree { source, nodes }
    }
}

impl ParseTree {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn shared_source(&self) -> Arc<str> {
        self.source.clone()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn kind(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].kind
    }

    pub fn span(&self, id: NodeId) -> Span {
        self.nodes[id.index()].span
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.index()].children
    }

    pub fn text(&self, id: NodeId) -> &str {
        self.span(id).slice(&self.source)
    }

    /// All node ids in preorder (document order).
    pub fn preorder(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn terminals(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.preorder().filter(|id| self.node(*id).terminal)
    }

    /// Children of `id` with the given kind.
    pub fn children_of_kind<'a>(&'a self, id: NodeId, kind: &'a str) -> impl Iterator<Item = NodeId> + 'a {
        self.children(id).iter().copied().filter(move |c| self.kind(*c) == kind)
    }

    pub fn first_child_of_kind(&self, id: NodeId, kind: &str) -> Option<NodeId> {
        self.children_of_kind(id, kind).next()
    }

    /// Descendants of `id` (excluding itself) with the given kind, in document order.
    pub fn descendants_of_kind(&self, id: NodeId, kind: &str) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.children(id).iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            if self.kind(n) == kind {
                out.push(n);
            }
            stack.extend(self.children(n).iter().rev().copied());
        }
        out
    }

    pub fn node_at_path(&self, path: &[u32]) -> Option<NodeId> {
        let mut cur = self.root();
        for &i in path {
            cur = *self.children(cur).get(i as usize)?;
        }
        Some(cur)
    }

    /// Concatenation of terminal texts interleaved with the bytes between
    /// them. Equal to the source whenever the span invariants hold.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.source.len());
        let mut cursor = 0;
        for t in self.terminals() {
            let span = self.span(t);
            out.push_str(&self.source[cursor..span.start]);
            out.push_str(self.text(t));
            cursor = span.end;
        }
        out.push_str(&self.source[cursor..]);
        out
    }

    /// Checks parent/child span nesting and sibling ordering.
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Schema("tree has no root".into()));
        }
        let mut stack = vec![(self.root(), Vec::<u32>::new())];
        while let Some((id, path)) = stack.pop() {
            let node = self.node(id);
            let err = |reason: String| TreeError::Span { path: path.clone(), reason };
            if node.span.start > node.span.end || node.span.end > self.source.len() {
                return Err(err(format!("span {} outside source of {} bytes", node.span, self.source.len())));
            }
            if !self.source.is_char_boundary(node.span.start) || !self.source.is_char_boundary(node.span.end) {
                return Err(err(format!("span {} splits a character", node.span)));
            }
            if node.terminal && !node.children.is_empty() {
                return Err(err("terminal node has children".into()));
            }
            if let (Some(first), Some(last)) = (node.children.first(), node.children.last()) {
                let (fs, ls) = (self.span(*first), self.span(*last));
                if fs.start != node.span.start || ls.end != node.span.end {
                    return Err(err(format!(
                        "node span {} differs from children cover {}..{}",
                        node.span, fs.start, ls.end
                    )));
                }
                for w in node.children.windows(2) {
                    let (a, b) = (self.span(w[0]), self.span(w[1]));
                    if a.end > b.start {
                        return Err(err(format!("children {a} and {b} overlap or are out of order")));
                    }
                }
            }
            for (i, c) in node.children.iter().enumerate() {
                let mut p = path.clone();
                p.push(i as u32);
                stack.push((*c, p));
            }
        }
        Ok(())
    }

    /// Structural copy of the subtree at `id`, with spans kept absolute.
    pub fn subtree(&self, id: NodeId) -> ParseTree {
        let mut b = TreeBuilder::default();
        fn copy(t: &ParseTree, b: &mut TreeBuilder, id: NodeId) -> NodeId {
            let n = t.node(id);
            if n.terminal {
                b.terminal(n.kind.clone(), n.span)
            } else {
                let kids = n.children.iter().map(|c| copy(t, b, *c)).collect();
                let new = b.rule(n.kind.clone(), kids, n.span.start);
                b.nodes[new.index()].span = n.span;
                new
            }
        }
        let root = copy(self, &mut b, id);
        b.finish(root, self.source.clone())
    }

    /// Same shape as `other` once both are shifted so their roots start at 0.
    pub fn same_shape(&self, other: &ParseTree) -> bool {
        let (da, db) = (self.span(self.root()).start, other.span(other.root()).start);
        self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.kind == b.kind
                    && a.terminal == b.terminal
                    && a.children == b.children
                    && a.span.start - da == b.span.start - db
                    && a.span.end - da == b.span.end - db
            })
    }

    pub fn to_document(&self) -> TreeDocument {
        fn node(t: &ParseTree, id: NodeId) -> DocNode {
            let n = t.node(id);
            DocNode {
                kind: n.kind.to_string(),
                start: n.span.start,
                end: n.span.end,
                children: n.children.iter().map(|c| node(t, *c)).collect(),
            }
        }
        TreeDocument { source: self.source.to_string(), root: node(self, self.root()) }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("tree documents always serialize")
    }
}

/// Exchange format for externally produced parse trees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub source: String,
    pub root: DocNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocNode {
    pub kind: String,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub children: Vec<DocNode>,
}

const MAX_IMPORT_DEPTH: usize = 1024;

impl TreeDocument {
    pub fn into_tree(self) -> Result<ParseTree, TreeError> {
        let source: Arc<str> = Arc::from(self.source);
        let mut b = TreeBuilder::default();
        // explicit stack: imported documents may be arbitrarily deep
        enum Step<'a> {
            Enter(&'a DocNode, usize),
            Exit(&'a DocNode),
        }
        let mut stack = vec![Step::Enter(&self.root, 0)];
        let mut built: Vec<NodeId> = Vec::new();
        while let Some(step) = stack.pop() {
            match step {
                Step::Enter(n, depth) => {
                    if depth > MAX_IMPORT_DEPTH {
                        return Err(TreeError::Schema(format!("tree deeper than {MAX_IMPORT_DEPTH}")));
                    }
                    if n.kind.is_empty() {
                        return Err(TreeError::Schema("node with empty kind".into()));
                    }
                    if n.start > n.end {
                        return Err(TreeError::Span {
                            path: Vec::new(),
                            reason: format!("inverted span {}..{} on {:?}", n.start, n.end, n.kind),
                        });
                    }
                    stack.push(Step::Exit(n));
                    for c in n.children.iter().rev() {
                        stack.push(Step::Enter(c, depth + 1));
                    }
                }
                Step::Exit(n) => {
                    let span = Span::new(n.start, n.end);
                    let id = if n.children.is_empty() {
                        b.terminal(n.kind.as_str(), span)
                    } else {
                        let kids = built.split_off(built.len() - n.children.len());
                        let id = b.rule(n.kind.as_str(), kids, n.start);
                        b.nodes[id.index()].span = span;
                        id
                    };
                    built.push(id);
                }
            }
        }
        let root = built.pop().ok_or_else(|| TreeError::Schema("empty document".into()))?;
        let tree = b.finish(root, source);
        tree.validate()?;
        Ok(tree)
    }
}

pub fn import_parse_tree(json: &str) -> Result<ParseTree, TreeError> {
    let doc: TreeDocument = serde_json::from_str(json).map_err(|e| TreeError::Schema(e.to_string()))?;
    doc.into_tree()
}

/// Every node whose kind is in `rules`, in document order. Nested
/// occurrences of the same rule are all reported.
pub fn find_rule_occurrences(
    tree: &ParseTree,
    grammar: &Grammar,
    rules: &BTreeSet<String>,
) -> Result<Vec<RuleOccurrence>, TreeError> {
    if let Some(unknown) = rules.iter().find(|r| !grammar.is_rule(r)) {
        return Err(TreeError::UnknownRule(unknown.clone()));
    }
    let mut out = Vec::new();
    if rules.is_empty() {
        return Ok(out);
    }
    let mut stack = vec![(tree.root(), Vec::<u32>::new())];
    while let Some((id, path)) = stack.pop() {
        let node = tree.node(id);
        if !node.terminal && rules.contains(&*node.kind) {
            out.push(RuleOccurrence { rule_name: node.kind.to_string(), span: node.span, node_path: path.clone() });
        }
        for (i, c) in node.children.iter().enumerate().rev() {
            let mut p = path.clone();
            p.push(i as u32);
            stack.push((*c, p));
        }
    }
    Ok(out)
}
