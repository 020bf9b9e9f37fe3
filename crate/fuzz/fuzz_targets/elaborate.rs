// SPDX-License-Identifier: Apache-2.0
#![no_main]

use std::collections::BTreeMap;
use std::time::Duration;

use libfuzzer_sys::fuzz_target;
use rulemask_core::budget::build_dependency_graph;
use rulemask_core::grammar::parse_source;
use rulemask_verify::check::equivalence_of;
use rulemask_verify::elab::elaborate;

fuzz_target!(|text: &str| {
    let Ok(tree) = parse_source(text) else { return };
    let graph = build_dependency_graph(&tree);
    let Some(top) = graph.units.first().map(|u| u.name.clone()) else { return };
    if let Ok(netlist) = elaborate(&tree, &top, &BTreeMap::new()) {
        // a design is equivalent to itself at any depth
        assert!(equivalence_of(&netlist, &netlist, 2, Duration::from_secs(5)).passed());
    }
});
