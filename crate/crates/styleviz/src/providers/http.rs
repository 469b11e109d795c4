//! Blocking HTTP clients for hosted models.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Map, Value};
use ureq::Agent;

use styleviz_core::generation::{ImageProvider, ImageRequest};
use styleviz_core::synthesis::{CompletionRequest, LlmProvider, Role};
use styleviz_core::ProviderError;

const MAX_IMAGE_BYTES: u64 = 64 * 1024 * 1024;

fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn transport_error(e: ureq::Error) -> ProviderError {
    let message = e.to_string();
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::BodyStalled => ProviderError::retryable(message),
        _ => ProviderError::fatal(message),
    }
}

fn status_error(status: u16, body: &str) -> ProviderError {
    let snippet: String = body.chars().take(300).collect();
    let message = format!("HTTP {status}: {snippet}");
    if status == 429 || status == 408 || status >= 500 {
        ProviderError::retryable(message)
    } else {
        ProviderError::fatal(message)
    }
}

/// Config strings become JSON numbers or booleans when they parse as such.
fn param_value(raw: &str) -> Value {
    match serde_json::from_str::<Value>(raw) {
        Ok(v @ (Value::Number(_) | Value::Bool(_))) => v,
        _ => Value::String(raw.to_owned()),
    }
}

fn merge_params(body: &mut Map<String, Value>, params: &BTreeMap<String, String>) {
    for (k, v) in params {
        body.insert(k.clone(), param_value(v));
    }
}

/// Messages-style chat completion endpoint.
///
/// Sends `{model, max_tokens, system, messages}` plus any provider params and
/// concatenates the `text` blocks of the reply's `content` array.
#[derive(Debug, Clone)]
pub struct HttpLlmProvider {
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub api_version: String,
    pub max_tokens: u32,
    agent: Agent,
}

impl HttpLlmProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            api_version: "2023-06-01".to_owned(),
            max_tokens: 1024,
            agent: agent(Duration::from_secs(120)),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = agent(timeout);
        self
    }

    pub fn request_body(&self, request: &CompletionRequest<'_>) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();
        let mut body = Map::new();
        body.insert("model".into(), json!(self.model));
        body.insert("max_tokens".into(), json!(self.max_tokens));
        body.insert("system".into(), json!(request.system));
        body.insert("messages".into(), Value::Array(messages));
        merge_params(&mut body, request.params);
        Value::Object(body)
    }
}

impl LlmProvider for HttpLlmProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("x-api-key", &self.api_key)
            .header("anthropic-version", &self.api_version)
            .send_json(self.request_body(request))
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(status_error(status, &text));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::fatal(format!("reply is not JSON: {e}")))?;
        let blocks = value
            .get("content")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::fatal("reply has no content array"))?;
        let out: String = blocks
            .iter()
            .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
            .filter_map(|b| b.get("text").and_then(Value::as_str))
            .collect();
        Ok(out)
    }
}

/// JSON text-to-image endpoint.
///
/// Accepts either raw image bytes or JSON carrying base64 under `image`,
/// `images[0]`, or `artifacts[0].base64`.
#[derive(Debug, Clone)]
pub struct HttpImageProvider {
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub negative_prompt: bool,
    pub extension: String,
    agent: Agent,
}

impl HttpImageProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            negative_prompt: true,
            extension: "png".to_owned(),
            agent: agent(Duration::from_secs(300)),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = agent(timeout);
        self
    }

    pub fn request_body(&self, request: &ImageRequest) -> Value {
        let mut body = Map::new();
        body.insert("model".into(), json!(self.model));
        body.insert("prompt".into(), json!(request.final_prompt));
        if self.negative_prompt && !request.negative_prompt.is_empty() {
            body.insert("negative_prompt".into(), json!(request.negative_prompt));
        }
        body.insert("seed".into(), json!(request.seed));
        body.insert("width".into(), json!(request.width));
        body.insert("height".into(), json!(request.height));
        merge_params(&mut body, &request.extra);
        Value::Object(body)
    }
}

fn decode_b64(s: &str) -> Result<Vec<u8>, ProviderError> {
    let s = s.split_once("base64,").map_or(s, |(_, rest)| rest);
    base64::engine::general_purpose::STANDARD
        .decode(s.trim())
        .map_err(|e| ProviderError::fatal(format!("bad base64 image: {e}")))
}

pub fn extract_image(value: &Value) -> Result<Vec<u8>, ProviderError> {
    let encoded = value
        .get("image")
        .and_then(Value::as_str)
        .or_else(|| value.pointer("/images/0").and_then(Value::as_str))
        .or_else(|| value.pointer("/artifacts/0/base64").and_then(Value::as_str))
        .or_else(|| value.pointer("/data/0/b64_json").and_then(Value::as_str))
        .ok_or_else(|| ProviderError::fatal("reply carries no image"))?;
    decode_b64(encoded)
}

impl ImageProvider for HttpImageProvider {
    fn generate(&self, request: &ImageRequest) -> Result<Vec<u8>, ProviderError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("authorization", &format!("Bearer {}", self.api_key))
            .header("accept", "image/*, application/json")
            .send_json(self.request_body(request))
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let is_json = resp
            .body()
            .mime_type()
            .is_some_and(|m| m.ends_with("json"));
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MAX_IMAGE_BYTES)
            .read_to_vec()
            .map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(status_error(status, &String::from_utf8_lossy(&bytes)));
        }
        if is_json {
            let value: Value = serde_json::from_slice(&bytes)
                .map_err(|e| ProviderError::fatal(format!("reply is not JSON: {e}")))?;
            return extract_image(&value);
        }
        if bytes.is_empty() {
            return Err(ProviderError::fatal("empty image body"));
        }
        Ok(bytes)
    }

    fn supports_negative_prompt(&self) -> bool {
        self.negative_prompt
    }

    fn file_extension(&self) -> &str {
        &self.extension
    }
}
