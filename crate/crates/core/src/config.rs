//! The single JSON configuration document. Unknown keys are rejected;
//! omitted keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::OracleMode;
use crate::gateway::BackendConfig;
use crate::ingest::ChunkingPolicy;
use crate::retrieval::RetrievalConfig;
use crate::text::is_quarter;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub samples: usize,
    pub threshold_bits: f64,
    pub oracle: OracleMode,
    pub tau: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            samples: 5,
            threshold_bits: crate::entropy::DEFAULT_THRESHOLD_BITS,
            oracle: OracleMode::ExactNormalized,
            tau: crate::entropy::DEFAULT_TAU,
            temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub chunking: ChunkingPolicy,
    pub retrieval: RetrievalConfig,
    pub backend: BackendConfig,
    pub entropy: EntropyConfig,
    pub reference_quarter: String,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            chunking: ChunkingPolicy::default(),
            retrieval: RetrievalConfig::default(),
            backend: BackendConfig::default(),
            entropy: EntropyConfig::default(),
            reference_quarter: "Q4".to_string(),
        }
    }
}

impl CliConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: CliConfig = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text).map_err(|e| match e {
            ConfigError::Invalid(m) => ConfigError::Read { path: path.display().to_string(), message: m },
            other => other,
        })
    }

    /// Checks every numeric bound. Call again after applying overrides.
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.chunking.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.retrieval.weights.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.retrieval.node_budget == 0 {
            return bad("retrieval.node_budget must be at least 1".into());
        }
        if self.retrieval.char_budget == 0 {
            return bad("retrieval.char_budget must be positive".into());
        }
        let e = &self.entropy;
        if e.samples < 2 {
            return bad(format!("entropy.samples must be at least 2, got {}", e.samples));
        }
        if !(e.threshold_bits.is_finite() && e.threshold_bits >= 0.0) {
            return bad(format!("entropy.threshold_bits must be finite and nonnegative, got {}", e.threshold_bits));
        }
        if !(e.tau > 0.0 && e.tau <= 1.0) {
            return bad(format!("entropy.tau must lie in (0, 1], got {}", e.tau));
        }
        if !(e.temperature.is_finite() && e.temperature >= 0.0) {
            return bad(format!("entropy.temperature must be finite and nonnegative, got {}", e.temperature));
        }
        if !is_quarter(&self.reference_quarter) {
            return bad(format!("reference_quarter must be one of Q1..Q4, got {:?}", self.reference_quarter));
        }
        Ok(())
    }
}
