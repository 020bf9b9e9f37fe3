// SPDX-License-Identifier: Apache-2.0

//! Grammar-driven rule-completion benchmark generation for HDL sources.
//!
//! The pipeline merges sources with [`preprocess`], parses them into a
//! [`grammar::ParseTree`], selects grammar-rule occurrences with
//! [`sampler`], masks them into [`sampler::TaskRecord`]s, trims context with
//! [`budget`] and renders prompts with [`prompt`].

pub mod budget;
pub mod grammar;
pub mod preprocess;
pub mod prompt;
pub mod sampler;
pub mod span;

pub use span::Span;
