// SPDX-License-Identifier: Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use rulemask::evaluate::ResultRow;
use rulemask::{build_report, parse_jsonl, to_jsonl};

fuzz_target!(|text: &str| {
    let Ok(rows) = parse_jsonl::<ResultRow>(text, "fuzz") else { return };
    assert_eq!(parse_jsonl::<ResultRow>(&to_jsonl(&rows), "fuzz").expect("rows re-read"), rows);
    let report = build_report(&rows);
    for cell in report.cells.values() {
        assert!(cell.eqv_pass <= cell.stx_pass && cell.stx_pass <= cell.n_tasks);
    }
    let _ = report.matrix_csv();
});
