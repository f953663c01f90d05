use std::path::Path;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_awaiting_reply, ChatBackend, ContentPart, Conversation, GatewayError, GenerationSettings,
    Role,
};
use crate::corpus::{ImageKind, ImageRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    /// Environment variable holding the bearer token. `None` sends no auth header.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Retries after the first attempt for transient failures (transport errors, 429, 5xx).
    pub max_retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            api_key_env: Some("SCL_API_KEY".into()),
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Resolves the auth token from the environment up front.
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let token = match &config.api_key_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| GatewayError::Credential(var.clone()))?)
            }
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            config,
            token,
            client,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn send_once(&self, body: &Value) -> Result<String, Attempt> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Transient(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Transient(format!(
                "status {}: {}",
                status.as_u16(),
                text
            )));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::Status {
                status: status.as_u16(),
                body: text,
            }));
        }
        parse_completion(&text).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Transient(String),
    Fatal(GatewayError),
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        conversation: &Conversation,
        settings: &GenerationSettings,
    ) -> Result<String, GatewayError> {
        check_awaiting_reply(conversation)?;
        if settings.temperature < 0.0 || settings.max_tokens == 0 {
            return Err(GatewayError::Settings(format!(
                "temperature {} / max_tokens {}",
                settings.temperature, settings.max_tokens
            )));
        }
        let body = request_body(conversation, settings)?;
        let total = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=total {
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => {
                    last = msg;
                    if attempt < total {
                        let delay = self
                            .config
                            .backoff_ms
                            .saturating_mul(1 << (attempt - 1).min(16));
                        thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: total,
            message: last,
        })
    }
}

fn mime_for_extension(path: &str) -> &'static str {
    let ext = Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/png",
    }
}

fn mime_for_base64(payload: &str) -> &'static str {
    if payload.starts_with("/9j/") {
        "image/jpeg"
    } else if payload.starts_with("R0lGOD") {
        "image/gif"
    } else if payload.starts_with("UklGR") {
        "image/webp"
    } else {
        "image/png"
    }
}

/// URL sent for an image: data URLs for inline and on-disk images, the
/// reference itself for remote ones.
pub(crate) fn image_url(image: &ImageRef) -> Result<String, GatewayError> {
    match image.kind {
        ImageKind::Url => Ok(image.value.clone()),
        ImageKind::Base64 if image.value.starts_with("data:") => Ok(image.value.clone()),
        ImageKind::Base64 => Ok(format!(
            "data:{};base64,{}",
            mime_for_base64(&image.value),
            image.value
        )),
        ImageKind::Path => {
            let bytes = std::fs::read(&image.value).map_err(|source| GatewayError::Image {
                path: image.value.clone(),
                source,
            })?;
            Ok(format!(
                "data:{};base64,{}",
                mime_for_extension(&image.value),
                base64::engine::general_purpose::STANDARD.encode(bytes)
            ))
        }
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// Chat-completions request body. Text-only turns use a plain string
/// `content`; turns with an image use the typed parts array.
pub fn request_body(
    conversation: &Conversation,
    settings: &GenerationSettings,
) -> Result<Value, GatewayError> {
    let mut messages = Vec::with_capacity(conversation.turns().len());
    for turn in conversation.turns() {
        let content = if turn.image_count() == 0 {
            Value::String(turn.text())
        } else {
            let mut parts = Vec::with_capacity(turn.parts.len());
            for part in &turn.parts {
                parts.push(match part {
                    ContentPart::Text { text } => json!({"type": "text", "text": text}),
                    ContentPart::Image { image } => {
                        json!({"type": "image_url", "image_url": {"url": image_url(image)?}})
                    }
                });
            }
            Value::Array(parts)
        };
        messages.push(json!({"role": role_name(turn.role), "content": content}));
    }
    Ok(json!({
        "model": settings.model_id,
        "messages": messages,
        "temperature": settings.temperature,
        "max_tokens": settings.max_tokens,
    }))
}

/// First choice's message content.
pub fn parse_completion(body: &str) -> Result<String, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        // Some servers return typed parts even for assistant text.
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => {
            return Err(GatewayError::Protocol(
                "no choices[0].message.content".into(),
            ))
        }
        other => {
            return Err(GatewayError::Protocol(format!(
                "unexpected content {other}"
            )))
        }
    };
    if text.trim().is_empty() {
        return Err(GatewayError::EmptyCompletion);
    }
    Ok(text)
}
