// SPDX-License-Identifier: Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use rulemask_llm::{extract_code, ApiMode};

fuzz_target!(|input: (&str, bool, Vec<String>)| {
    let (response, chat, stops) = input;
    let mode = if chat { ApiMode::Chat } else { ApiMode::Completion };
    if let Ok(code) = extract_code(response, mode, &stops) {
        assert!(!code.trim().is_empty());
    }
});
