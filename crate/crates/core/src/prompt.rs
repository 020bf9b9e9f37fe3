// SPDX-License-Identifier: Apache-2.0

//! Chat and fill-in-the-middle prompt rendering.

use serde::{Deserialize, Serialize};

use crate::sampler::{TaskRecord, CHAT_MASK};
use crate::span::Span;

pub const CONTEXT_SLOT: &str = "{context}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FimOrder {
    /// prefix, suffix, middle
    #[default]
    Psm,
    /// suffix, prefix, middle
    Spm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FimTokenSet {
    pub prefix_token: String,
    pub suffix_token: String,
    pub middle_token: String,
    #[serde(default)]
    pub order: FimOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("span {span} is outside the {len}-byte reference or splits a character")]
    SpanOutOfRange { span: Span, len: usize },
    #[error("FIM tokens must be non-empty and pairwise distinct")]
    InvalidTokenSet,
    #[error("control text {0:?} already occurs in the source")]
    ControlTokenInSource(String),
    #[error("template is missing {0}")]
    TemplateSlotMissing(&'static str),
}

impl FimTokenSet {
    pub fn new(prefix: &str, suffix: &str, middle: &str, order: FimOrder) -> Result<Self, PromptError> {
        let set = FimTokenSet {
            prefix_token: prefix.to_string(),
            suffix_token: suffix.to_string(),
            middle_token: middle.to_string(),
            order,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let t = self.tokens();
        if t.iter().any(|s| s.is_empty()) || t[0] == t[1] || t[0] == t[2] || t[1] == t[2] {
            return Err(PromptError::InvalidTokenSet);
        }
        Ok(())
    }

    pub fn tokens(&self) -> [&str; 3] {
        [&self.prefix_token, &self.suffix_token, &self.middle_token]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Chat,
    Fim,
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptMode::Chat => "chat",
            PromptMode::Fim => "fim",
        })
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "chat" => Ok(PromptMode::Chat),
            "fim" => Ok(PromptMode::Fim),
            other => Err(format!("unknown prompt mode {other:?} (expected chat or fim)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// A rendered prompt. Exactly one of `chat_messages` and `fim_text` is set,
/// matching `mode`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_id: String,
    pub mode: PromptMode,
    pub chat_messages: Option<Vec<ChatMessage>>,
    pub fim_text: Option<String>,
}

/// Splits `reference` around `span` into prefix, middle and suffix.
pub fn split_fim(reference: &str, span: Span) -> Result<(&str, &str, &str), PromptError> {
    let middle = reference.get(span.start..span.end).ok_or(PromptError::SpanOutOfRange { span, len: reference.len() })?;
    Ok((&reference[..span.start], middle, &reference[span.end..]))
}

pub fn build_fim_prompt(task: &TaskRecord, tokens: &FimTokenSet) -> Result<PromptBundle, PromptError> {
    tokens.validate()?;
    if let Some(t) = tokens.tokens().into_iter().find(|t| task.reference.contains(t)) {
        return Err(PromptError::ControlTokenInSource(t.to_string()));
    }
    let (prefix, _, suffix) = split_fim(&task.reference, task.mask_span)?;
    let (p, s, m) = (&tokens.prefix_token, &tokens.suffix_token, &tokens.middle_token);
    let text = match tokens.order {
        FimOrder::Psm => [p, prefix, s, suffix, m].concat(),
        FimOrder::Spm => [s, suffix, p, prefix, m].concat(),
    };
    Ok(PromptBundle { task_id: task.task_id.clone(), mode: PromptMode::Fim, chat_messages: None, fim_text: Some(text) })
}

/// System and user message templates. The user template embeds the masked
/// source at `{context}`; one of the two must mention `<MASK>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTemplate {
    pub system: String,
    pub user: String,
}

impl Default for ChatTemplate {
    fn default() -> Self {
        ChatTemplate {
            system: "You are an expert hardware engineer. Complete the code replaced by <MASK> so the design is \
                     functionally correct. Reply with only the replacement code."
                .to_string(),
            user: CONTEXT_SLOT.to_string(),
        }
    }
}

impl ChatTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        if !self.user.contains(CONTEXT_SLOT) {
            return Err(PromptError::TemplateSlotMissing("the {context} slot in the user message"));
        }
        if !self.system.contains(CHAT_MASK) && !self.user.replace(CONTEXT_SLOT, "").contains(CHAT_MASK) {
            return Err(PromptError::TemplateSlotMissing("a mention of <MASK>"));
        }
        Ok(())
    }
}

pub fn build_chat_prompt(task: &TaskRecord, template: &ChatTemplate) -> Result<PromptBundle, PromptError> {
    template.validate()?;
    if task.reference.contains(CHAT_MASK) {
        return Err(PromptError::ControlTokenInSource(CHAT_MASK.to_string()));
    }
    let context = task.render_masked(CHAT_MASK);
    let messages = vec![
        ChatMessage { role: "system".into(), content: template.system.clone() },
        ChatMessage { role: "user".into(), content: template.user.replace(CONTEXT_SLOT, &context) },
    ];
    Ok(PromptBundle {
        task_id: task.task_id.clone(),
        mode: PromptMode::Chat,
        chat_messages: Some(messages),
        fim_text: None,
    })
}

pub fn build_prompt(
    task: &TaskRecord,
    mode: PromptMode,
    template: &ChatTemplate,
    fim: Option<&FimTokenSet>,
) -> Result<PromptBundle, PromptError> {
    match mode {
        PromptMode::Chat => build_chat_prompt(task, template),
        PromptMode::Fim => build_fim_prompt(task, fim.ok_or(PromptError::InvalidTokenSet)?),
    }
}
