// SPDX-License-Identifier: Apache-2.0

//! Model configuration and built-in FIM profiles.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use rulemask_core::prompt::{FimTokenSet, PromptMode};

use crate::LlmError;

/// Which endpoint shape a model is queried through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ApiMode {
    /// `POST /chat/completions`
    #[default]
    Chat,
    /// `POST /completions`
    Completion,
}

impl ApiMode {
    pub fn serves(self, prompt: PromptMode) -> bool {
        matches!((self, prompt), (ApiMode::Chat, PromptMode::Chat) | (ApiMode::Completion, PromptMode::Fim))
    }
}

fn default_max_tokens() -> u32 {
    512
}

fn default_attempts() -> u32 {
    5
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_s() -> u64 {
    120
}

/// One model endpoint. `endpoint` is an OpenAI-compatible base URL such as
/// `http://localhost:8000/v1`, or `mock:oracle` / `mock:constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub mode: ApiMode,
    #[serde(default)]
    pub fim_profile: Option<String>,
    /// Extra stop sequences on top of the FIM profile's.
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub request_timeout_s: u64,
}

impl ModelConfig {
    pub fn mock(kind: MockKind) -> ModelConfig {
        ModelConfig {
            name: kind.endpoint().to_string(),
            endpoint: kind.endpoint().to_string(),
            model: String::new(),
            api_key_env: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            mode: ApiMode::Chat,
            fim_profile: None,
            stop: Vec::new(),
            max_attempts: 1,
            backoff_ms: 0,
            request_timeout_s: default_timeout_s(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: String| Err(LlmError::Config(m));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be a finite value >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        if let Some(p) = &self.fim_profile {
            if self.mode != ApiMode::Completion && self.mock_kind().is_none() {
                return bad(format!("FIM profile {p:?} needs mode = \"completion\""));
            }
            fim_profile(p).ok_or_else(|| LlmError::Config(format!("unknown FIM profile {p:?}")))?;
        }
        if self.mock_kind().is_none() && self.endpoint.starts_with("mock:") {
            return bad(format!("unknown mock model {:?}", self.endpoint));
        }
        Ok(())
    }

    pub fn mock_kind(&self) -> Option<MockKind> {
        match self.endpoint.as_str() {
            "mock:oracle" => Some(MockKind::Oracle),
            "mock:constant" => Some(MockKind::Constant),
            _ => None,
        }
    }

    /// FIM tokens for this model; mocks fall back to the first built-in
    /// profile so FIM prompts can still be rendered.
    pub fn fim_tokens(&self) -> Option<FimTokenSet> {
        match &self.fim_profile {
            Some(p) => fim_profile(p).map(|f| f.tokens.clone()),
            None if self.mock_kind().is_some() => fim_profile(DEFAULT_FIM_PROFILE).map(|f| f.tokens.clone()),
            None => None,
        }
    }

    /// Stop sequences: the FIM profile's followed by the configured ones.
    pub fn stop_tokens(&self) -> Vec<String> {
        let mut stops: Vec<String> = self.fim_profile.as_deref().and_then(fim_profile).map(|f| f.stop.clone()).unwrap_or_default();
        stops.extend(self.stop.iter().cloned());
        stops
    }
}

/// Loads a model profile. `mock:oracle` and `mock:constant` name the
/// built-in test doubles; anything else is a TOML or JSON file.
pub fn load_model(spec: &str) -> Result<ModelConfig, LlmError> {
    if let Some(kind) = MockKind::from_endpoint(spec) {
        return Ok(ModelConfig::mock(kind));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("cannot read {spec}: {e}")))?;
    let config: ModelConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("{spec}: {e}")))?
    } else {
        toml::from_str(&text).map_err(|e| LlmError::Config(format!("{spec}: {e}")))?
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockKind {
    /// Echoes the task's ground truth.
    Oracle,
    /// Always answers [`CONSTANT_COMPLETION`].
    Constant,
}

pub const CONSTANT_COMPLETION: &str = "assign y = 1'b0;";

impl MockKind {
    pub fn endpoint(self) -> &'static str {
        match self {
            MockKind::Oracle => "mock:oracle",
            MockKind::Constant => "mock:constant",
        }
    }

    pub fn from_endpoint(s: &str) -> Option<MockKind> {
        match s {
            "mock:oracle" => Some(MockKind::Oracle),
            "mock:constant" => Some(MockKind::Constant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct FimProfile {
    #[serde(flatten)]
    pub tokens: FimTokenSet,
    #[serde(default)]
    pub stop: Vec<String>,
}

pub const DEFAULT_FIM_PROFILE: &str = "starcoder";

pub fn fim_profiles() -> &'static BTreeMap<String, FimProfile> {
    static PROFILES: OnceLock<BTreeMap<String, FimProfile>> = OnceLock::new();
    PROFILES.get_or_init(|| toml::from_str(include_str!("../data/fim_profiles.toml")).expect("built-in FIM profiles parse"))
}

pub fn fim_profile(name: &str) -> Option<&'static FimProfile> {
    fim_profiles().get(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rulemask_core::prompt::FimOrder;

    #[test]
    fn builtin_profiles_are_valid() {
        assert!(fim_profiles().len() >= 4);
        for (name, p) in fim_profiles() {
            assert_eq!(p.tokens.validate(), Ok(()), "{name}");
            assert!(!p.stop.is_empty(), "{name}");
        }
        assert_eq!(fim_profile("starcoder").unwrap().tokens.order, FimOrder::Psm);
    }

    #[test]
    fn config_validation() {
        let toml = r#"
            name = "local"
            endpoint = "http://localhost:8000/v1"
            model = "starcoder2"
            mode = "completion"
            fim_profile = "starcoder"
            stop = ["endmodule"]
        "#;
        let c: ModelConfig = toml::from_str(toml).unwrap();
        c.validate().unwrap();
        assert_eq!((c.temperature, c.max_attempts), (0.0, 5));
        assert_eq!(c.stop_tokens().last().unwrap(), "endmodule");
        assert!(c.fim_tokens().is_some());

        let mut chat_fim = c.clone();
        chat_fim.mode = ApiMode::Chat;
        assert!(matches!(chat_fim.validate(), Err(LlmError::Config(_))));
        let mut hot = c.clone();
        hot.temperature = -0.5;
        assert!(hot.validate().is_err());
        let mut unknown = c;
        unknown.fim_profile = Some("nope".into());
        assert!(unknown.validate().is_err());
        assert!(toml::from_str::<ModelConfig>("name = 'x'\nendpoint = 'y'\ncolour = 1").is_err());
    }

    #[test]
    fn mocks_load_by_name() {
        assert_eq!(load_model("mock:oracle").unwrap().mock_kind(), Some(MockKind::Oracle));
        assert!(load_model("mock:constant").unwrap().fim_tokens().is_some());
        assert!(ApiMode::Completion.serves(PromptMode::Fim));
        assert!(!ApiMode::Chat.serves(PromptMode::Fim));
    }
}
