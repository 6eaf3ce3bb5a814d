//! OpenAI-compatible HTTP backend.
//!
//! Chat: `POST {endpoint}/chat/completions` with
//! `{"model", "messages": [{"role", "content"}], "temperature", "seed", "max_tokens"}`,
//! reading `choices[0].message.content`.
//! Embeddings: `POST {endpoint}/embeddings` with `{"model", "input"}`, reading
//! `data[0].embedding`.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::json;

use super::prompt::PromptRequest;
use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure (unreachable host, timeout). Retried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError(pub String);

/// Sends one JSON POST. Implemented over reqwest in production and by
/// in-process fakes in tests.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer_token: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer_token: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(bearer_token)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

const SYSTEM_PROMPT: &str = "You are a precise data assistant. Follow the output format exactly.";

pub struct HttpBackend {
    pub(crate) endpoint: String,
    pub(crate) api_key: String,
    pub(crate) model: String,
    pub(crate) embedding_model: String,
    pub(crate) timeout: Duration,
    pub(crate) max_retries: u32,
    pub(crate) backoff_base: Duration,
    pub(crate) transport: Arc<dyn Transport>,
}

impl HttpBackend {
    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint.trim_end_matches('/'), path)
    }

    /// Posts with exponential backoff on transport failures: waits
    /// `base * 2^k` after the k-th failed attempt.
    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let url = self.url(path);
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.transport.post_json(&url, &self.api_key, body, self.timeout) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return serde_json::from_str(&reply.body)
                        .map_err(|e| GatewayError::Protocol(format!("response is not JSON: {e}")));
                }
                Ok(reply) => {
                    return Err(GatewayError::Status { status: reply.status, body: truncate(&reply.body, 512) })
                }
                Err(TransportError(msg)) => {
                    last = msg;
                    if attempt + 1 < attempts {
                        thread::sleep(self.backoff_base * 2u32.saturating_pow(attempt));
                    }
                }
            }
        }
        Err(GatewayError::Unreachable { attempts, last_error: last })
    }

    pub fn chat(&self, req: &PromptRequest) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": req.render()},
            ],
            "temperature": req.params.temperature,
            "seed": req.params.seed,
            "max_tokens": req.params.max_output_chars,
        });
        let resp = self.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Protocol("missing choices[0].message.content".into()))
    }

    pub fn embedding(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = json!({ "model": self.embedding_model, "input": text });
        let resp = self.post("embeddings", &body)?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(|e| e.as_array())
            .ok_or_else(|| GatewayError::Protocol("missing data[0].embedding".into()))?;
        values
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| GatewayError::Protocol("non-numeric embedding value".into())))
            .collect()
    }
}

fn truncate(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}
