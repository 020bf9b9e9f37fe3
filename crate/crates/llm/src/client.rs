// SPDX-License-Identifier: Apache-2.0

//! Prompt submission with retries, and the mock models.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use rulemask_core::prompt::{PromptBundle, PromptMode};
use rulemask_core::sampler::TaskRecord;

use crate::config::{ApiMode, MockKind, ModelConfig, CONSTANT_COMPLETION};
use crate::transport::{HttpRequest, Transport, TransportError};
use crate::LlmError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub latency_ms: u64,
    pub usage: Option<Usage>,
    pub attempts: u32,
}

/// The JSON request for `bundle`, and the path it is posted to.
pub fn request_body(bundle: &PromptBundle, config: &ModelConfig) -> Result<(&'static str, Value), LlmError> {
    if !config.mode.serves(bundle.mode) {
        return Err(LlmError::ModeMismatch { prompt: bundle.mode, api: config.mode });
    }
    let stop = config.stop_tokens();
    let mut body = match bundle.mode {
        PromptMode::Chat => {
            let messages = bundle.chat_messages.as_ref().ok_or_else(|| LlmError::Malformed("chat bundle without messages".into()))?;
            json!({ "model": config.model, "messages": messages })
        }
        PromptMode::Fim => {
            let prompt = bundle.fim_text.as_ref().ok_or_else(|| LlmError::Malformed("FIM bundle without text".into()))?;
            json!({ "model": config.model, "prompt": prompt })
        }
    };
    body["temperature"] = json!(config.temperature);
    body["max_tokens"] = json!(config.max_tokens);
    if !stop.is_empty() {
        body["stop"] = json!(stop);
    }
    let path = match config.mode {
        ApiMode::Chat => "/chat/completions",
        ApiMode::Completion => "/completions",
    };
    Ok((path, body))
}

fn parse_response(body: &str, mode: ApiMode) -> Result<(String, Option<Usage>), LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Malformed(format!("response is not JSON: {e}")))?;
    let choice = &v["choices"][0];
    let text = match mode {
        ApiMode::Chat => &choice["message"]["content"],
        ApiMode::Completion => &choice["text"],
    };
    let text = text.as_str().ok_or_else(|| LlmError::Malformed("response has no completion text".into()))?;
    let usage = v.get("usage").map(|u| Usage {
        prompt_tokens: u["prompt_tokens"].as_u64(),
        completion_tokens: u["completion_tokens"].as_u64(),
    });
    Ok((text.to_string(), usage))
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Sends prompts to an OpenAI-compatible endpoint.
pub struct Client<T> {
    transport: T,
    sleep: fn(Duration),
}

impl<T: Transport> Client<T> {
    pub fn new(transport: T) -> Self {
        Client { transport, sleep: std::thread::sleep }
    }

    /// Replaces the backoff sleep, for tests.
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    /// Retries HTTP 429/5xx and connection failures with exponential
    /// backoff, up to `config.max_attempts` attempts in total.
    pub fn generate(&self, bundle: &PromptBundle, config: &ModelConfig) -> Result<Generation, LlmError> {
        let (path, body) = request_body(bundle, config)?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::Auth(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let req = HttpRequest {
            url: format!("{}{path}", config.endpoint.trim_end_matches('/')),
            body: serde_json::to_string(&body).expect("JSON values serialize"),
            api_key,
        };
        let mut last = String::new();
        let mut unreachable = true;
        for attempt in 1..=config.max_attempts {
            if attempt > 1 {
                let delay = config.backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
                (self.sleep)(Duration::from_millis(delay));
            }
            match self.transport.send(&req) {
                Ok(resp) if resp.status == 200 => {
                    let (text, usage) = parse_response(&resp.body, config.mode)?;
                    return Ok(Generation { text, latency_ms: resp.elapsed_ms, usage, attempts: attempt });
                }
                Ok(resp) if resp.status == 401 || resp.status == 403 => {
                    return Err(LlmError::Auth(format!("HTTP {}: {}", resp.status, resp.body)))
                }
                Ok(resp) if retryable(resp.status) => {
                    unreachable = false;
                    last = format!("HTTP {}", resp.status);
                }
                Ok(resp) => return Err(LlmError::Http { status: resp.status, body: resp.body }),
                Err(TransportError::Unreachable(e)) => last = e,
                Err(e) => return Err(LlmError::EndpointUnreachable(e.to_string())),
            }
        }
        if unreachable {
            Err(LlmError::EndpointUnreachable(last))
        } else {
            Err(LlmError::RetriesExhausted { attempts: config.max_attempts, last })
        }
    }
}

/// Response of a mock model to `task`.
pub fn mock_generate(kind: MockKind, task: &TaskRecord) -> Generation {
    let text = match kind {
        MockKind::Oracle => task.ground_truth.clone(),
        MockKind::Constant => CONSTANT_COMPLETION.to_string(),
    };
    Generation { text, latency_ms: 0, usage: None, attempts: 1 }
}

/// A model ready to answer prompts: a mock or a live client.
pub enum Model {
    Mock(MockKind),
    Remote(Client<Box<dyn Transport>>),
}

impl Model {
    pub fn for_config(config: &ModelConfig, transport: impl FnOnce() -> Box<dyn Transport>) -> Model {
        match config.mock_kind() {
            Some(kind) => Model::Mock(kind),
            None => Model::Remote(Client::new(transport())),
        }
    }

    pub fn generate(&self, task: &TaskRecord, bundle: &PromptBundle, config: &ModelConfig) -> Result<Generation, LlmError> {
        match self {
            Model::Mock(kind) => Ok(mock_generate(*kind, task)),
            Model::Remote(client) => client.generate(bundle, config),
        }
    }
}

/// The code part of a response. Chat replies yield the first fenced block
/// (or the trimmed reply without one); completions are cut at the first
/// stop sequence.
pub fn extract_code(response: &str, mode: ApiMode, stop_tokens: &[String]) -> Result<String, LlmError> {
    let code = match mode {
        ApiMode::Chat => match response.find("```") {
            Some(open) => {
                let after = &response[open + 3..];
                // the rest of the fence line is a language tag
                let body = after.find('\n').map_or("", |nl| &after[nl + 1..]);
                let body = body.find("```").map_or(body, |close| &body[..close]);
                body.trim().to_string()
            }
            None => response.trim().to_string(),
        },
        ApiMode::Completion => {
            let cut = stop_tokens.iter().filter(|s| !s.is_empty()).filter_map(|s| response.find(s.as_str())).min();
            response[..cut.unwrap_or(response.len())].to_string()
        }
    };
    if code.trim().is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_examples() {
        assert_eq!(extract_code("```verilog\n~a\n```", ApiMode::Chat, &[]).unwrap(), "~a");
        assert_eq!(extract_code("Sure:\n```\nassign y = a;\n```\nand ```x```", ApiMode::Chat, &[]).unwrap(), "assign y = a;");
        assert_eq!(extract_code("  ~a  \n", ApiMode::Chat, &[]).unwrap(), "~a");
        assert_eq!(extract_code("```v\n~a", ApiMode::Chat, &[]).unwrap(), "~a");
        let stops = vec!["⟨EOT⟩".to_string(), "<fim_prefix>".to_string()];
        assert_eq!(extract_code("~a;⟨EOT⟩garbage", ApiMode::Completion, &stops).unwrap(), "~a;");
        assert_eq!(extract_code("x<fim_prefix>y⟨EOT⟩", ApiMode::Completion, &stops).unwrap(), "x");
        assert_eq!(extract_code(" \n\t", ApiMode::Chat, &[]), Err(LlmError::EmptyCompletion));
        assert_eq!(extract_code("⟨EOT⟩", ApiMode::Completion, &stops), Err(LlmError::EmptyCompletion));
        assert_eq!(extract_code("```\n```", ApiMode::Chat, &[]), Err(LlmError::EmptyCompletion));
    }

    #[test]
    fn response_parsing() {
        let chat = r#"{"choices":[{"message":{"role":"assistant","content":"~a"}}],"usage":{"prompt_tokens":12,"completion_tokens":2}}"#;
        let (text, usage) = parse_response(chat, ApiMode::Chat).unwrap();
        assert_eq!((text.as_str(), usage.unwrap().completion_tokens), ("~a", Some(2)));
        let (text, usage) = parse_response(r#"{"choices":[{"text":"!a"}]}"#, ApiMode::Completion).unwrap();
        assert_eq!((text.as_str(), usage), ("!a", None));
        assert!(matches!(parse_response("{}", ApiMode::Chat), Err(LlmError::Malformed(_))));
        assert!(matches!(parse_response("oops", ApiMode::Chat), Err(LlmError::Malformed(_))));
    }
}
