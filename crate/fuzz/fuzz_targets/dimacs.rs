// SPDX-License-Identifier: Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use rulemask_verify::cnf::{export_dimacs, import_dimacs};
use rulemask_verify::sat::{sat_solve, SatResult};

fuzz_target!(|text: &str| {
    let Ok(formula) = import_dimacs(text) else { return };
    let again = import_dimacs(&export_dimacs(&formula)).expect("exported DIMACS re-imports");
    assert_eq!(again, formula);
    if formula.num_vars <= 64 && formula.clauses.len() <= 256 {
        if let SatResult::Sat(model) = sat_solve(&formula, None) {
            assert!(formula.is_satisfied_by(&model));
        }
    }
});
