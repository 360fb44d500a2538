//! Wire transports for live model calls.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use thiserror::Error;

use super::{ProviderConfig, Usage};
use crate::prompt::{MediaKind, PromptBundle};

pub const API_KEY_VAR: &str = "WORKBENCH_API_KEY";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network: {0}")]
    Network(String),
    #[error("undecodable provider response: {0}")]
    Decode(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            TransportError::Network(_) => true,
            TransportError::Decode(_) => false,
        }
    }
}

/// What came back from one provider call.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Usage,
    /// Generation settings as echoed by the provider, when it reports them.
    pub echo: Option<Value>,
}

/// A backend able to execute one prompt bundle.
///
/// `call_index` identifies the call within a plan; real transports ignore
/// it, scripted ones use it to vary their answers.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        bundle: &PromptBundle,
        config: &ProviderConfig,
        call_index: u64,
    ) -> Result<ProviderReply, TransportError>;

    fn has_credential(&self) -> bool {
        true
    }
}

/// Responses-API style HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(900)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        }
    }

    /// Uses `WORKBENCH_API_KEY` for the credential.
    pub fn from_env(base_url: Option<String>) -> Self {
        let key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.trim().is_empty());
        Self::new(base_url.unwrap_or_else(|| DEFAULT_BASE_URL.to_string()), key)
    }
}

pub fn request_body(bundle: &PromptBundle, config: &ProviderConfig) -> Value {
    let mut content = vec![json!({"type": "input_text", "text": bundle.input_payload})];
    for doc in &bundle.attachments {
        match doc.media_kind {
            MediaKind::Pdf => {
                let b64 = base64::engine::general_purpose::STANDARD.encode(&doc.bytes);
                content.push(json!({
                    "type": "input_file",
                    "filename": format!("{}.pdf", doc.name),
                    "file_data": format!("data:application/pdf;base64,{b64}"),
                }));
            }
            MediaKind::PlainText => {
                content.push(json!({
                    "type": "input_text",
                    "text": format!("[{}]\n{}", doc.name, String::from_utf8_lossy(&doc.bytes)),
                }));
            }
        }
    }
    json!({
        "model": config.model_id,
        "reasoning": {"effort": config.reasoning_effort.label()},
        "temperature": config.temperature,
        "instructions": bundle.system_text,
        "input": [{"role": "user", "content": content}],
    })
}

pub fn decode_reply(body: &Value) -> Result<ProviderReply, TransportError> {
    let mut text = String::new();
    let outputs = body
        .get("output")
        .and_then(Value::as_array)
        .ok_or_else(|| TransportError::Decode("missing output array".into()))?;
    for item in outputs {
        for part in item.get("content").and_then(Value::as_array).into_iter().flatten() {
            if part.get("type").and_then(Value::as_str) == Some("output_text") {
                text.push_str(part.get("text").and_then(Value::as_str).unwrap_or_default());
            }
        }
    }
    let usage = body.get("usage").cloned().unwrap_or(Value::Null);
    let count = |v: Option<&Value>| v.and_then(Value::as_u64).unwrap_or(0);
    let usage = Usage {
        input_tokens: count(usage.get("input_tokens")),
        output_tokens: count(usage.get("output_tokens")),
        reasoning_tokens: count(usage.pointer("/output_tokens_details/reasoning_tokens")),
    };
    let echo = json!({
        "model": body.get("model"),
        "temperature": body.get("temperature"),
        "reasoning": body.get("reasoning"),
    });
    Ok(ProviderReply { text, usage, echo: Some(echo) })
}

impl Transport for HttpTransport {
    fn send(
        &self,
        bundle: &PromptBundle,
        config: &ProviderConfig,
        _call_index: u64,
    ) -> Result<ProviderReply, TransportError> {
        let url = format!("{}/responses", self.base_url);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request_body(bundle, config))
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let raw = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Http { status, body: raw });
        }
        let body: Value =
            serde_json::from_str(&raw).map_err(|e| TransportError::Decode(e.to_string()))?;
        decode_reply(&body)
    }

    fn has_credential(&self) -> bool {
        self.api_key.is_some()
    }
}
