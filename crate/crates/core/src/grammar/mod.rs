// SPDX-License-Identifier: Apache-2.0

//! Grammar abstraction, the MiniHDL tokenizer and parser, and rule lookup.

mod lexer;
mod parser;
mod rules;
mod tree;

use std::collections::BTreeSet;

pub use lexer::{count_tokens_lenient, is_keyword, tokenize, LexError, Lexed, Token, TokenKind, KEYWORDS};
pub use parser::{parse, parse_rule, parse_source, ParseError, SyntaxError, RULE_NAMES};
pub use rules::{RuleCatalog, RuleInfo, TABLE_RULES};
pub use tree::{
    find_rule_occurrences, import_parse_tree, DocNode, Node, NodeId, ParseTree, RuleOccurrence, TreeBuilder,
    TreeDocument, TreeError,
};

/// Non-terminal names, terminal kinds and start symbol of a grammar. The
/// productions themselves live in the parser that realizes the grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    rule_names: BTreeSet<String>,
    terminal_kinds: BTreeSet<String>,
    start_symbol: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("start symbol {0:?} is not a rule name")]
    StartNotARule(String),
    #[error("{0:?} is both a rule name and a terminal kind")]
    Overlap(String),
}

impl Grammar {
    pub fn new(
        rule_names: BTreeSet<String>,
        terminal_kinds: BTreeSet<String>,
        start_symbol: impl Into<String>,
    ) -> Result<Self, GrammarError> {
        let start_symbol = start_symbol.into();
        if !rule_names.contains(&start_symbol) {
            return Err(GrammarError::StartNotARule(start_symbol));
        }
        if let Some(both) = rule_names.intersection(&terminal_kinds).next() {
            return Err(GrammarError::Overlap(both.clone()));
        }
        Ok(Grammar { rule_names, terminal_kinds, start_symbol })
    }

    /// The built-in MiniHDL grammar.
    pub fn minihdl() -> Self {
        Grammar::new(
            RULE_NAMES.iter().map(|s| s.to_string()).collect(),
            TokenKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            "compilation_unit",
        )
        .expect("built-in grammar is well formed")
    }

    /// Grammar implied by an imported tree: every non-terminal kind present
    /// is a rule, every leaf kind a terminal, the root kind the start.
    pub fn from_tree(tree: &ParseTree) -> Result<Self, GrammarError> {
        let mut rules = BTreeSet::new();
        let mut terminals = BTreeSet::new();
        for id in tree.preorder() {
            let n = tree.node(id);
            if n.terminal {
                terminals.insert(n.kind.to_string());
            } else {
                rules.insert(n.kind.to_string());
            }
        }
        let start = tree.kind(tree.root()).to_string();
        rules.insert(start.clone());
        terminals.remove(&start);
        Grammar::new(rules, terminals, start)
    }

    pub fn rule_names(&self) -> &BTreeSet<String> {
        &self.rule_names
    }

    pub fn terminal_kinds(&self) -> &BTreeSet<String> {
        &self.terminal_kinds
    }

    pub fn start_symbol(&self) -> &str {
        &self.start_symbol
    }

    pub fn is_rule(&self, name: &str) -> bool {
        self.rule_names.contains(name)
    }
}
