//! Turning a cleaned sheet into validated text-to-image prompts through an
//! LLM provider, with repair prompting on malformed output.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::provider::ProviderError;
use crate::sheet::CleanedSheet;

/// Identifier recorded in provenance for [`DEFAULT_SYSTEM_PROMPT_TEMPLATE`].
pub const DEFAULT_TEMPLATE_VERSION: &str = "semiotician-v1";

/// Placeholders: `{prompt_count}`, `{prompt_noun}`, `{min_descriptors}`.
pub const DEFAULT_SYSTEM_PROMPT_TEMPLATE: &str = "\
You are an expert visual semiotician. You will be given a summary of an \
author's writing style, organised by narrative category. Work out what that \
style would look like as imagery.

Use these mappings when reading the summary:
- tone and emotional register become the visual mood and the colour palette;
- recurring themes and subjects become the subject matter of the scene;
- narrative complexity and structure become the artistic style and the composition.

Aim for the overall aesthetic essence of the author: the recurring patterns \
and the feel of the writing as a whole. Do not illustrate individual claims \
one by one, and do not try to picture abstract plot mechanics literally.

Write exactly {prompt_count} distinct text-to-image {prompt_noun}, each \
exploring a different visual facet of the same style. Every prompt is one \
comma-separated list of at least {min_descriptors} visual descriptors that \
together cover the main subject, the mood, the artistic style, the lighting, \
and technical aspects of the image.

Reply with a single JSON object and nothing else, shaped like this:
{\"prompts\": [\"descriptor, descriptor, descriptor, ...\"]}
The \"prompts\" array must hold exactly {prompt_count} {prompt_noun}.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub system_prompt_template: String,
    pub template_version: String,
    pub prompt_count: usize,
    pub min_descriptors_per_prompt: usize,
    /// Extra attempts after a response fails validation.
    pub max_retries: u32,
    /// Extra attempts after a retryable provider failure. Counted apart
    /// from validation retries.
    pub max_transport_retries: u32,
    /// Passed through to the provider untouched (model id, temperature, ...).
    pub provider_params: BTreeMap<String, String>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            system_prompt_template: DEFAULT_SYSTEM_PROMPT_TEMPLATE.to_owned(),
            template_version: DEFAULT_TEMPLATE_VERSION.to_owned(),
            prompt_count: 3,
            min_descriptors_per_prompt: 5,
            max_retries: 2,
            max_transport_retries: 2,
            provider_params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("prompt_count must be at least 1")]
    PromptCount,
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.prompt_count == 0 {
            return Err(ConfigError::PromptCount);
        }
        Ok(())
    }
}

pub fn build_system_prompt(config: &SynthesisConfig) -> String {
    let noun = if config.prompt_count == 1 { "prompt" } else { "prompts" };
    config
        .system_prompt_template
        .replace("{prompt_count}", &format!("{}", config.prompt_count))
        .replace("{prompt_noun}", noun)
        .replace("{min_descriptors}", &format!("{}", config.min_descriptors_per_prompt))
}

/// First user turn carrying the cleaned narrative.
pub fn build_user_message(sheet: &CleanedSheet) -> String {
    format!("Author writing style summary:\n\n{}", sheet.narrative)
}

/// One image prompt: an ordered list of descriptor phrases.
///
/// Serialized as its rendered string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VisualPrompt {
    descriptors: Vec<String>,
    rendered: String,
}

impl VisualPrompt {
    pub const SEPARATOR: &'static str = ", ";

    /// Splits on commas and trims each descriptor. Trailing commas are
    /// ignored; an empty descriptor anywhere else is an error.
    pub fn parse(text: &str) -> Result<Self, EmptyDescriptor> {
        let text = text.trim().trim_end_matches(|c: char| c == ',' || c.is_whitespace());
        let descriptors: Vec<String> = text.split(',').map(|d| d.trim().to_owned()).collect();
        Self::from_descriptors(descriptors)
    }

    pub fn from_descriptors(descriptors: Vec<String>) -> Result<Self, EmptyDescriptor> {
        if descriptors
            .iter()
            .any(|d| d.is_empty() || d.contains(',') || d.trim() != d)
        {
            return Err(EmptyDescriptor);
        }
        let rendered = descriptors.join(Self::SEPARATOR);
        Ok(Self {
            descriptors,
            rendered,
        })
    }

    pub fn descriptors(&self) -> &[String] {
        &self.descriptors
    }

    pub fn rendered(&self) -> &str {
        &self.rendered
    }
}

impl fmt::Display for VisualPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rendered)
    }
}

/// A prompt contained an empty (or malformed) descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("empty descriptor")]
pub struct EmptyDescriptor;

impl TryFrom<String> for VisualPrompt {
    type Error = EmptyDescriptor;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        VisualPrompt::parse(&value)
    }
}

impl From<VisualPrompt> for String {
    fn from(p: VisualPrompt) -> String {
        p.rendered
    }
}

/// Why a model response was rejected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResponseError {
    #[error("no JSON object found in response")]
    NoObject,
    #[error("object has no usable `prompts` array: {0}")]
    MissingPrompts(String),
    #[error("expected {expected} prompts, found {found}")]
    Cardinality { expected: usize, found: usize },
    #[error("prompt {index} is empty or has an empty descriptor")]
    Empty { index: usize },
    #[error("prompt {index} has {found} descriptors, at least {min} required")]
    Sparsity {
        index: usize,
        found: usize,
        min: usize,
    },
    #[error("prompts {first} and {second} are identical")]
    Duplicate { first: usize, second: usize },
}

/// Machine-readable rejection reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Format,
    Cardinality,
    Empty,
    Sparsity,
    Distinctness,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Format => "format",
            ErrorCode::Cardinality => "cardinality",
            ErrorCode::Empty => "empty",
            ErrorCode::Sparsity => "sparsity",
            ErrorCode::Distinctness => "distinctness",
        }
    }
}

impl ResponseError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ResponseError::NoObject | ResponseError::MissingPrompts(_) => ErrorCode::Format,
            ResponseError::Cardinality { .. } => ErrorCode::Cardinality,
            ResponseError::Empty { .. } => ErrorCode::Empty,
            ResponseError::Sparsity { .. } => ErrorCode::Sparsity,
            ResponseError::Duplicate { .. } => ErrorCode::Distinctness,
        }
    }

    /// Follow-up user turn asking the model to fix this specific problem.
    pub fn repair_message(&self, config: &SynthesisConfig) -> String {
        let n = config.prompt_count;
        let detail = match self {
            ResponseError::NoObject | ResponseError::MissingPrompts(_) => format!(
                "I could not find a JSON object of the form {{\"prompts\": [...]}} in your reply ({self})."
            ),
            ResponseError::Cardinality { found, .. } => {
                format!("Your reply contained {found} prompts but exactly {n} are required.")
            }
            ResponseError::Empty { index } => format!(
                "Prompt {} is empty or contains an empty item between commas.",
                index + 1
            ),
            ResponseError::Sparsity { index, found, min } => format!(
                "Prompt {} lists only {found} descriptors; each prompt needs at least {min} comma-separated descriptors.",
                index + 1
            ),
            ResponseError::Duplicate { first, second } => format!(
                "Prompts {} and {} are identical; every prompt must be different.",
                first + 1,
                second + 1
            ),
        };
        format!(
            "[error:{}] {detail} Reply again with only the corrected JSON object holding exactly {n} prompts.",
            self.code().as_str()
        )
    }
}

/// Locates the first JSON object in `raw` that has a `prompts` key,
/// tolerating prose or code fences around it.
fn extract_object(raw: &str) -> Result<serde_json::Map<String, Value>, ResponseError> {
    let mut found_object = false;
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            if map.contains_key("prompts") {
                return Ok(map);
            }
            found_object = true;
        }
    }
    if found_object {
        Err(ResponseError::MissingPrompts("missing `prompts` key".to_owned()))
    } else {
        Err(ResponseError::NoObject)
    }
}

/// Extracts and validates the prompt list from a raw model response.
pub fn parse_llm_response(
    raw: &str,
    config: &SynthesisConfig,
) -> Result<Vec<VisualPrompt>, ResponseError> {
    let object = extract_object(raw)?;
    let items = match object.get("prompts") {
        Some(Value::Array(items)) => items,
        _ => {
            return Err(ResponseError::MissingPrompts(
                "`prompts` is not an array".to_owned(),
            ))
        }
    };
    let mut texts = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Value::String(s) => texts.push(s.as_str()),
            _ => {
                return Err(ResponseError::MissingPrompts(
                    "`prompts` must contain strings".to_owned(),
                ))
            }
        }
    }
    if texts.len() != config.prompt_count {
        return Err(ResponseError::Cardinality {
            expected: config.prompt_count,
            found: texts.len(),
        });
    }
    let mut prompts = Vec::with_capacity(texts.len());
    for (index, text) in texts.iter().enumerate() {
        if text.trim().is_empty() {
            return Err(ResponseError::Empty { index });
        }
        let prompt = VisualPrompt::parse(text).map_err(|_| ResponseError::Empty { index })?;
        if prompt.descriptors().len() < config.min_descriptors_per_prompt {
            return Err(ResponseError::Sparsity {
                index,
                found: prompt.descriptors().len(),
                min: config.min_descriptors_per_prompt,
            });
        }
        prompts.push(prompt);
    }
    for first in 0..prompts.len() {
        for second in first + 1..prompts.len() {
            if prompts[first].rendered() == prompts[second].rendered() {
                return Err(ResponseError::Duplicate { first, second });
            }
        }
    }
    Ok(prompts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub system: &'a str,
    /// Conversation so far; the first turn carries the narrative and any
    /// later user turns are repair requests.
    pub messages: &'a [ChatMessage],
    pub params: &'a BTreeMap<String, String>,
}

/// A text-completion backend.
pub trait LlmProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError>;
}

impl<T: LlmProvider + ?Sized> LlmProvider for &T {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedAttempt {
    pub raw: String,
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderTrace {
    /// Raw text of the accepted response.
    pub raw_response: String,
    /// Provider calls that returned text, including the accepted one.
    pub attempts: u32,
    pub transport_failures: u32,
    pub rejected: Vec<RejectedAttempt>,
    pub template_version: String,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTriple {
    pub author_id: String,
    pub prompts: Vec<VisualPrompt>,
    pub provider_trace: ProviderTrace,
}

impl PromptTriple {
    /// Re-checks cardinality, descriptor minimum, and distinctness, e.g.
    /// after loading from disk.
    pub fn validate(&self, config: &SynthesisConfig) -> Result<(), ResponseError> {
        if self.prompts.len() != config.prompt_count {
            return Err(ResponseError::Cardinality {
                expected: config.prompt_count,
                found: self.prompts.len(),
            });
        }
        for (index, p) in self.prompts.iter().enumerate() {
            if p.descriptors().len() < config.min_descriptors_per_prompt {
                return Err(ResponseError::Sparsity {
                    index,
                    found: p.descriptors().len(),
                    min: config.min_descriptors_per_prompt,
                });
            }
        }
        for first in 0..self.prompts.len() {
            for second in first + 1..self.prompts.len() {
                if self.prompts[first] == self.prompts[second] {
                    return Err(ResponseError::Duplicate { first, second });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthesisError {
    #[error("{author_id}: no valid response after {} attempts", attempts.len())]
    Exhausted {
        author_id: String,
        attempts: Vec<RejectedAttempt>,
    },
    #[error("{author_id}: provider failed after {transport_failures} transport failures: {source}")]
    Provider {
        author_id: String,
        transport_failures: u32,
        source: ProviderError,
        attempts: Vec<RejectedAttempt>,
    },
}

/// Runs the prompt conversation for one sheet.
///
/// The provider is called at most `1 + max_retries` times for validation
/// failures; retryable transport failures use their own budget.
pub fn synthesize_prompts<P: LlmProvider + ?Sized>(
    sheet: &CleanedSheet,
    provider: &P,
    config: &SynthesisConfig,
) -> Result<PromptTriple, SynthesisError> {
    let system = build_system_prompt(config);
    let mut messages = alloc::vec![ChatMessage::user(build_user_message(sheet))];
    let mut rejected: Vec<RejectedAttempt> = Vec::new();
    let mut transport_failures = 0u32;
    loop {
        let request = CompletionRequest {
            system: &system,
            messages: &messages,
            params: &config.provider_params,
        };
        let raw = match provider.complete(&request) {
            Ok(raw) => raw,
            Err(e) if e.retryable && transport_failures < config.max_transport_retries => {
                transport_failures += 1;
                continue;
            }
            Err(source) => {
                return Err(SynthesisError::Provider {
                    author_id: sheet.author_id.clone(),
                    transport_failures,
                    source,
                    attempts: rejected,
                })
            }
        };
        match parse_llm_response(&raw, config) {
            Ok(prompts) => {
                return Ok(PromptTriple {
                    author_id: sheet.author_id.clone(),
                    prompts,
                    provider_trace: ProviderTrace {
                        raw_response: raw,
                        attempts: rejected.len() as u32 + 1,
                        transport_failures,
                        rejected,
                        template_version: config.template_version.clone(),
                        params: config.provider_params.clone(),
                    },
                })
            }
            Err(err) => {
                rejected.push(RejectedAttempt {
                    raw: raw.clone(),
                    code: err.code(),
                    message: format!("{err}"),
                });
                if rejected.len() as u32 > config.max_retries {
                    return Err(SynthesisError::Exhausted {
                        author_id: sheet.author_id.clone(),
                        attempts: rejected,
                    });
                }
                messages.push(ChatMessage::assistant(raw));
                messages.push(ChatMessage::user(err.repair_message(config)));
            }
        }
    }
}
