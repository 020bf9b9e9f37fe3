// SPDX-License-Identifier: Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use rulemask_core::grammar::{find_rule_occurrences, parse_source, Grammar, TABLE_RULES};

fuzz_target!(|text: &str| {
    let Ok(tree) = parse_source(text) else { return };
    let rules = TABLE_RULES.iter().map(|r| r.name.to_string()).collect();
    let occurrences = find_rule_occurrences(&tree, &Grammar::minihdl(), &rules).expect("table rules are grammar rules");
    for occ in occurrences {
        assert!(text.get(occ.span.start..occ.span.end).is_some(), "{occ:?}");
    }
});
