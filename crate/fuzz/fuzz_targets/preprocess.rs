// SPDX-License-Identifier: Apache-2.0
#![no_main]

use std::path::PathBuf;

use libfuzzer_sys::fuzz_target;
use rulemask_core::preprocess::{preprocess_with, MemoryLoader, PreprocessOptions};

fuzz_target!(|text: &str| {
    let loader = MemoryLoader::default()
        .with("top.v", text)
        .with("inc/defs.vh", "`define WIDTH 8\n`define ONE 1'b1\n");
    let opts = PreprocessOptions { include_dirs: vec![PathBuf::from("inc")], ..Default::default() };
    if let Ok(unit) = preprocess_with(&loader, &[PathBuf::from("top.v")], &opts) {
        for offset in [0, unit.text.len() / 2, unit.text.len().saturating_sub(1)] {
            if offset < unit.text.len() {
                let _ = unit.locate(offset);
            }
        }
    }
});
