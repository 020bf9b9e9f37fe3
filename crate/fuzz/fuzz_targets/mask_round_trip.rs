// SPDX-License-Identifier: Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use rulemask_core::grammar::RuleOccurrence;
use rulemask_core::prompt::split_fim;
use rulemask_core::sampler::{mask, DEFAULT_PLACEHOLDER};
use rulemask_core::Span;

fuzz_target!(|input: (&str, u16, u16)| {
    let (text, a, b) = input;
    let (a, b) = (a as usize % (text.len() + 1), b as usize % (text.len() + 1));
    let span = Span::new(a.min(b), a.max(b));
    let occ = RuleOccurrence { rule_name: "expression".into(), span, node_path: vec![] };
    match mask(text, &occ, DEFAULT_PLACEHOLDER) {
        Ok(task) => {
            task.validate().expect("masked tasks are consistent");
            assert_eq!(task.splice(&task.ground_truth), text);
            let (p, m, s) = split_fim(text, span).expect("mask accepted the span");
            assert_eq!([p, m, s].concat(), text);
        }
        Err(_) => assert!(
            !text.is_char_boundary(span.start) || !text.is_char_boundary(span.end) || text.contains(DEFAULT_PLACEHOLDER)
        ),
    }
});
