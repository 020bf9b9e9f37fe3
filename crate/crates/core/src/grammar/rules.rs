// SPDX-License-Identifier: Apache-2.0

//! The rule set used for benchmark generation, with short acronyms and
//! accepted spellings.

use std::collections::BTreeSet;

use super::Grammar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleInfo {
    pub acronym: &'static str,
    pub name: &'static str,
    /// Alternative spellings accepted in configuration files.
    pub aliases: &'static [&'static str],
    /// Statement-like rules whose region can be deleted for the liveness check.
    pub deletable: bool,
}

pub const TABLE_RULES: [RuleInfo; 9] = [
    RuleInfo { acronym: "PORT", name: "ansi_port_declaration", aliases: &[], deletable: false },
    RuleInfo { acronym: "PARAM", name: "parameter_declaration", aliases: &[], deletable: false },
    RuleInfo {
        acronym: "INST",
        name: "module_program_interface_instantiation",
        aliases: &["module_instantiation"],
        deletable: true,
    },
    RuleInfo {
        acronym: "CONT",
        name: "continuous_assignment",
        aliases: &["continuous_assign", "continous_assignment"],
        deletable: true,
    },
    RuleInfo { acronym: "NBLK", name: "nonblocking_assignment", aliases: &[], deletable: true },
    RuleInfo { acronym: "BLK", name: "blocking_assignment", aliases: &[], deletable: true },
    RuleInfo { acronym: "COND", name: "conditional_statement", aliases: &[], deletable: true },
    RuleInfo { acronym: "CASE", name: "case_statement", aliases: &[], deletable: true },
    RuleInfo { acronym: "ALWS", name: "always_construct", aliases: &["ALWAYS"], deletable: true },
];

/// Resolves user-facing rule names (acronyms, aliases, grammar names) to
/// canonical grammar rule names.
#[derive(Debug, Clone)]
pub struct RuleCatalog {
    grammar: Grammar,
}

impl RuleCatalog {
    pub fn new(grammar: Grammar) -> Self {
        RuleCatalog { grammar }
    }

    pub fn minihdl() -> Self {
        RuleCatalog::new(Grammar::minihdl())
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn info(name: &str) -> Option<&'static RuleInfo> {
        TABLE_RULES.iter().find(|r| {
            r.name == name || r.acronym.eq_ignore_ascii_case(name) || r.aliases.iter().any(|a| a.eq_ignore_ascii_case(name))
        })
    }

    pub fn acronym(name: &str) -> Option<&'static str> {
        Self::info(name).map(|r| r.acronym)
    }

    pub fn resolve(&self, name: &str) -> Option<String> {
        if self.grammar.is_rule(name) {
            return Some(name.to_string());
        }
        Self::info(name).map(|r| r.name.to_string()).filter(|n| self.grammar.is_rule(n))
    }

    pub fn resolve_all<'a, I>(&self, names: I) -> Result<BTreeSet<String>, String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        names.into_iter().map(|n| self.resolve(n).ok_or_else(|| n.to_string())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acronyms_and_aliases_resolve() {
        let c = RuleCatalog::minihdl();
        assert_eq!(c.resolve("CONT").as_deref(), Some("continuous_assignment"));
        assert_eq!(c.resolve("continuous_assign").as_deref(), Some("continuous_assignment"));
        assert_eq!(c.resolve("continous_assignment").as_deref(), Some("continuous_assignment"));
        assert_eq!(c.resolve("expression").as_deref(), Some("expression"));
        assert_eq!(c.resolve("alws").as_deref(), Some("always_construct"));
        assert_eq!(c.resolve("nonsense"), None);
    }

    #[test]
    fn every_table_rule_is_in_the_grammar() {
        let g = Grammar::minihdl();
        for r in TABLE_RULES {
            assert!(g.is_rule(r.name), "{}", r.name);
        }
    }
}
