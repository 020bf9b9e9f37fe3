// SPDX-License-Identifier: Apache-2.0

//! Clients for OpenAI-compatible model endpoints, plus mock models.

pub mod client;
pub mod config;
pub mod transport;

pub use client::{extract_code, Client, Generation, Model, Usage};
pub use config::{load_model, ApiMode, MockKind, ModelConfig};

use rulemask_core::prompt::PromptMode;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("gave up after {attempts} attempts (last: {last})")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("a {prompt} prompt cannot be sent to a {api:?} endpoint")]
    ModeMismatch { prompt: PromptMode, api: ApiMode },
    #[error("the response contains no code")]
    EmptyCompletion,
    #[error("invalid model configuration: {0}")]
    Config(String),
}
