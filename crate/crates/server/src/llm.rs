//! Completion backend that calls an HTTP endpoint.
//!
//! Request: `POST url` with `{"model", "prompt", "max_tokens"}`.
//! Response: either `{"text": ...}` or the common completions shapes
//! `{"choices": [{"text": ...}]}` / `{"choices": [{"message": {"content": ...}}]}`.

use std::sync::OnceLock;
use std::time::Duration;

use csi_core::model::LlmEndpoint;
use csi_core::surrogate::{CompletionBackend, DistillError};
use serde_json::{json, Value};

const MAX_TOKENS: u32 = 80;

/// The blocking client owns a private runtime that must not be created or
/// dropped on an async worker, so it is built on first use by the thread
/// that calls `complete`.
pub struct HttpCompletionBackend {
    client: OnceLock<reqwest::blocking::Client>,
    endpoint: LlmEndpoint,
}

impl HttpCompletionBackend {
    pub fn new(endpoint: LlmEndpoint) -> Self {
        Self {
            client: OnceLock::new(),
            endpoint,
        }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, DistillError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let built = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.endpoint.timeout))
            .build()
            .map_err(|e| DistillError::Backend(e.to_string()))?;
        Ok(self.client.get_or_init(|| built))
    }
}

/// Pulls the completion text out of a response body.
pub fn completion_text(body: &Value) -> Option<&str> {
    body.get("text")
        .and_then(Value::as_str)
        .or_else(|| body.pointer("/choices/0/text").and_then(Value::as_str))
        .or_else(|| {
            body.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
        })
}

impl CompletionBackend for HttpCompletionBackend {
    fn complete(&self, prompt: &str) -> Result<String, DistillError> {
        let backend = |e: reqwest::Error| DistillError::Backend(e.to_string());
        let body: Value = self
            .client()?
            .post(&self.endpoint.url)
            .json(
                &json!({"model": self.endpoint.model, "prompt": prompt, "max_tokens": MAX_TOKENS}),
            )
            .send()
            .and_then(reqwest::blocking::Response::error_for_status)
            .map_err(backend)?
            .json()
            .map_err(backend)?;
        completion_text(&body)
            .map(str::to_owned)
            .ok_or_else(|| DistillError::Backend("response has no completion text".into()))
    }
}
