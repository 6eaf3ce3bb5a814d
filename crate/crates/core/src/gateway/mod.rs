//! Model backends: a deterministic mock and an OpenAI-compatible HTTP client.

mod http;
pub mod mock;
mod prompt;

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpReply, ReqwestTransport, Transport, TransportError};
pub use mock::MockBackend;
pub use prompt::{render_context, PromptRequest, SamplingParams, TemplateId, CONTEXT_SEPARATOR};

use crate::ids::stable_hash64;
use http::HttpBackend;

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("template {template:?} has unbound placeholders {missing:?}")]
    UnboundPlaceholders { template: TemplateId, missing: Vec<String> },
    #[error("backend unreachable after {attempts} attempts: {last_error}")]
    Unreachable { attempts: u32, last_error: String },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected backend response: {0}")]
    Protocol(String),
    #[error("all {n} samples failed; first error: {first}")]
    AllSamplesFailed { n: usize, first: Box<GatewayError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Mock,
    Http,
}

impl std::str::FromStr for BackendMode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendMode::Mock),
            "http" => Ok(BackendMode::Http),
            other => Err(GatewayError::Config(format!("unknown backend mode {other:?}"))),
        }
    }
}

/// Backend settings. `mode` and `endpoint_url` fall back to the
/// `MODEL_BACKEND` and `MODEL_ENDPOINT` environment variables when unset; the
/// API key is only ever read from the environment variable named by
/// `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: Option<BackendMode>,
    pub endpoint_url: Option<String>,
    pub api_key_env: String,
    pub model: String,
    pub embedding_model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub embedding_dim: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: None,
            endpoint_url: None,
            api_key_env: "MODEL_API_KEY".into(),
            model: "default".into(),
            embedding_model: "default-embedding".into(),
            timeout_ms: 30_000,
            max_retries: 3,
            max_in_flight: 4,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        BackendConfig { mode: Some(BackendMode::Mock), ..Default::default() }
    }

    pub fn http(endpoint_url: impl Into<String>) -> Self {
        BackendConfig { mode: Some(BackendMode::Http), endpoint_url: Some(endpoint_url.into()), ..Default::default() }
    }

    pub fn resolved_mode(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<BackendMode, GatewayError> {
        match self.mode {
            Some(m) => Ok(m),
            None => env("MODEL_BACKEND").map_or(Ok(BackendMode::Mock), |v| v.parse()),
        }
    }

    fn check(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        if self.embedding_dim == 0 {
            return Err(GatewayError::Config("embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
}

/// Unit-norm embedding, or all zeros for blank text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector { values: vec![0.0; dim] }
    }

    /// Truncates or zero-pads to `dim`, then L2-normalizes.
    pub fn normalized(mut values: Vec<f64>, dim: usize) -> Self {
        values.resize(dim, 0.0);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
        }
        EmbeddingVector { values }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Cosine similarity; zero when either vector is the zero sentinel.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

/// Hashed bag of words: case-folded alphanumeric tokens counted into
/// `dim` buckets.
pub fn mock_embedding(text: &str, dim: usize) -> EmbeddingVector {
    let mut counts = vec![0.0; dim];
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let bucket = stable_hash64(token.to_lowercase().as_bytes()) % dim as u64;
        counts[bucket as usize] += 1.0;
    }
    EmbeddingVector::normalized(counts, dim)
}

/// Counting semaphore bounding concurrent backend calls.
pub(crate) struct InFlightLimiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct Permit<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    fn new(max: usize) -> Self {
        InFlightLimiter { max, active: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("limiter lock");
        while *active >= self.max {
            active = self.freed.wait(active).expect("limiter lock");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("limiter lock");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

enum Backend {
    Mock(MockBackend),
    Http(HttpBackend),
}

/// Completed samples plus per-sample failures.
#[derive(Debug)]
pub struct SampleSet {
    pub completions: Vec<Completion>,
    pub failures: Vec<(usize, GatewayError)>,
}

/// Shareable handle over one backend.
pub struct Gateway {
    backend: Backend,
    embedding_dim: usize,
    limiter: InFlightLimiter,
}

impl Gateway {
    pub fn mock() -> Self {
        Gateway::from_config(&BackendConfig::mock()).expect("mock config is valid")
    }

    /// Builds a gateway, reading `MODEL_BACKEND`, `MODEL_ENDPOINT` and the API
    /// key variable from the process environment.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        Self::from_config_with_env(cfg, &|k| std::env::var(k).ok())
    }

    pub fn from_config_with_env(
        cfg: &BackendConfig,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Self, GatewayError> {
        cfg.check()?;
        match cfg.resolved_mode(env)? {
            BackendMode::Mock => Ok(Gateway {
                backend: Backend::Mock(MockBackend),
                embedding_dim: cfg.embedding_dim,
                limiter: InFlightLimiter::new(cfg.max_in_flight),
            }),
            BackendMode::Http => {
                let key = Self::http_key(cfg, env)?;
                let transport = Arc::new(ReqwestTransport::new()?);
                Self::http_with_transport(cfg, env, key, transport)
            }
        }
    }

    /// HTTP gateway over a caller-supplied transport.
    pub fn with_transport(
        cfg: &BackendConfig,
        api_key: impl Into<String>,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, GatewayError> {
        cfg.check()?;
        Self::http_with_transport(cfg, &|k| std::env::var(k).ok(), api_key.into(), transport)
    }

    fn http_key(cfg: &BackendConfig, env: &dyn Fn(&str) -> Option<String>) -> Result<String, GatewayError> {
        env(&cfg.api_key_env)
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GatewayError::Config(format!("environment variable {} is not set", cfg.api_key_env)))
    }

    fn http_with_transport(
        cfg: &BackendConfig,
        env: &dyn Fn(&str) -> Option<String>,
        api_key: String,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, GatewayError> {
        let endpoint = cfg
            .endpoint_url
            .clone()
            .or_else(|| env("MODEL_ENDPOINT"))
            .filter(|e| !e.trim().is_empty())
            .ok_or_else(|| GatewayError::Config("http mode requires a nonempty endpoint_url".into()))?;
        Ok(Gateway {
            backend: Backend::Http(HttpBackend {
                endpoint,
                api_key,
                model: cfg.model.clone(),
                embedding_model: cfg.embedding_model.clone(),
                timeout: Duration::from_millis(cfg.timeout_ms),
                max_retries: cfg.max_retries,
                backoff_base: Duration::from_millis(250),
                transport,
            }),
            embedding_dim: cfg.embedding_dim,
            limiter: InFlightLimiter::new(cfg.max_in_flight),
        })
    }

    /// Overrides the 250 ms retry backoff base (HTTP only).
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        if let Backend::Http(h) = &mut self.backend {
            h.backoff_base = base;
        }
        self
    }

    pub fn kind(&self) -> BackendKind {
        match self.backend {
            Backend::Mock(_) => BackendKind::Mock,
            Backend::Http(_) => BackendKind::Http,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn complete(&self, req: &PromptRequest) -> Result<Completion, GatewayError> {
        let (text, latency_ms) = match &self.backend {
            Backend::Mock(m) => (m.complete(req), 0),
            Backend::Http(h) => {
                let _permit = self.limiter.acquire();
                let started = Instant::now();
                let text = h.chat(req)?;
                (text, started.elapsed().as_millis() as u64)
            }
        };
        let text = text.chars().take(req.params.max_output_chars).collect();
        Ok(Completion { text, backend: self.kind(), latency_ms })
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Ok(EmbeddingVector::zeros(self.embedding_dim));
        }
        match &self.backend {
            Backend::Mock(_) => Ok(mock_embedding(text, self.embedding_dim)),
            Backend::Http(h) => {
                let _permit = self.limiter.acquire();
                Ok(EmbeddingVector::normalized(h.embedding(text)?, self.embedding_dim))
            }
        }
    }

    /// Draws `n` answers. At temperature 0 every sample uses the request seed;
    /// otherwise sample `i` uses `seed + i`. HTTP samples run concurrently,
    /// bounded by `max_in_flight`.
    pub fn sample_answers(&self, req: &PromptRequest, n: usize) -> Result<SampleSet, GatewayError> {
        if n == 0 {
            return Err(GatewayError::Config("sample count must be at least 1".into()));
        }
        let seed_for = |i: usize| {
            if req.params.temperature == 0.0 {
                req.params.seed
            } else {
                req.params.seed.wrapping_add(i as u64)
            }
        };
        let results: Vec<Result<Completion, GatewayError>> = match self.backend {
            Backend::Mock(_) => (0..n).map(|i| self.complete(&req.with_seed(seed_for(i)))).collect(),
            Backend::Http(_) => std::thread::scope(|scope| {
                let handles: Vec<_> = (0..n)
                    .map(|i| {
                        let r = req.with_seed(seed_for(i));
                        scope.spawn(move || self.complete(&r))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(GatewayError::Protocol("sample thread panicked".into()))))
                    .collect()
            }),
        };
        let mut completions = Vec::new();
        let mut failures = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(c) => completions.push(c),
                Err(e) => failures.push((i, e)),
            }
        }
        if completions.is_empty() {
            let (_, first) = failures.remove(0);
            return Err(GatewayError::AllSamplesFailed { n, first: Box::new(first) });
        }
        Ok(SampleSet { completions, failures })
    }
}
