// SPDX-License-Identifier: Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use rulemask_core::grammar::{count_tokens_lenient, tokenize};

fuzz_target!(|text: &str| {
    // the lexer is lossless: trivia plus token text rebuilds the input
    if let Ok(lexed) = tokenize(text) {
        assert_eq!(lexed.reconstruct(), text);
        assert_eq!(count_tokens_lenient(text), lexed.tokens.len());
    }
});
