//! Semantic entropy over sampled answers.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, Gateway, GatewayError, PromptRequest};
use crate::text::normalize_answer;

pub const DEFAULT_TAU: f64 = 0.8;
pub const DEFAULT_THRESHOLD_BITS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("similarity threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub index: usize,
    pub text: String,
}

impl AnswerSample {
    pub fn numbered<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Vec<AnswerSample> {
        texts.into_iter().enumerate().map(|(index, t)| AnswerSample { index, text: t.into() }).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EquivalenceOracle {
    #[default]
    ExactNormalized,
    EmbeddingCosine {
        threshold: f64,
    },
}

impl EquivalenceOracle {
    pub fn embedding(threshold: f64) -> Result<Self, EntropyError> {
        if threshold > 0.0 && threshold <= 1.0 {
            Ok(EquivalenceOracle::EmbeddingCosine { threshold })
        } else {
            Err(EntropyError::BadThreshold(threshold))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EquivalenceOracle::ExactNormalized => "exact_normalized",
            EquivalenceOracle::EmbeddingCosine { .. } => "embedding_cosine",
        }
    }
}

/// Oracle mode names as they appear in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    ExactNormalized,
    EmbeddingCosine,
}

impl FromStr for OracleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact_normalized" | "exact" => Ok(OracleMode::ExactNormalized),
            "embedding_cosine" | "embedding" => Ok(OracleMode::EmbeddingCosine),
            other => Err(format!("unknown oracle {other:?} (expected exact_normalized or embedding_cosine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticCluster {
    pub representative: AnswerSample,
    pub members: Vec<usize>,
}

/// Greedy clustering in index order: each sample joins the first cluster
/// whose representative it is equivalent to, else founds a new one.
pub fn cluster_answers(
    samples: &[AnswerSample],
    oracle: &EquivalenceOracle,
    gateway: &Gateway,
) -> Result<Vec<SemanticCluster>, EntropyError> {
    if samples.is_empty() {
        return Err(EntropyError::TooFewSamples { min: 1, got: 0 });
    }
    let mut ordered: Vec<&AnswerSample> = samples.iter().collect();
    ordered.sort_by_key(|s| s.index);

    enum Key {
        Text(String),
        Vector(EmbeddingVector),
    }
    let key_of = |s: &AnswerSample| -> Result<Key, EntropyError> {
        Ok(match oracle {
            EquivalenceOracle::ExactNormalized => Key::Text(normalize_answer(&s.text)),
            EquivalenceOracle::EmbeddingCosine { .. } => Key::Vector(gateway.embed(&s.text)?),
        })
    };
    let same = |a: &Key, b: &Key| match (a, b, oracle) {
        (Key::Text(x), Key::Text(y), _) => x == y,
        (Key::Vector(x), Key::Vector(y), EquivalenceOracle::EmbeddingCosine { threshold }) => x.cosine(y) >= *threshold,
        _ => false,
    };

    let mut clusters: Vec<(Key, SemanticCluster)> = Vec::new();
    for s in ordered {
        let key = key_of(s)?;
        match clusters.iter_mut().find(|(rep, _)| same(&key, rep)) {
            Some((_, c)) => c.members.push(s.index),
            None => clusters.push((key, SemanticCluster { representative: s.clone(), members: vec![s.index] })),
        }
    }
    Ok(clusters.into_iter().map(|(_, c)| c).collect())
}

/// Shannon entropy in bits of the cluster-size distribution. Exactly zero
/// for a single cluster.
pub fn semantic_entropy(clusters: &[SemanticCluster]) -> f64 {
    entropy_of_sizes(clusters.iter().map(|c| c.members.len()))
}

pub fn entropy_of_sizes(sizes: impl IntoIterator<Item = usize>) -> f64 {
    let mut sizes: Vec<usize> = sizes.into_iter().filter(|&s| s > 0).collect();
    // Fixed summation order keeps the result bit-identical under relabeling.
    sizes.sort_unstable();
    if sizes.len() <= 1 {
        return 0.0;
    }
    let n: usize = sizes.iter().sum();
    let h: f64 = sizes
        .iter()
        .map(|&s| {
            let p = s as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewFlag {
    Ok,
    Review,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub representative: usize,
    pub members: Vec<usize>,
    pub texts: Vec<String>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub question: String,
    pub answer: String,
    pub oracle: &'static str,
    pub samples: usize,
    pub failed_samples: usize,
    pub clusters: Vec<ClusterSummary>,
    pub entropy_bits: f64,
    pub threshold_bits: f64,
    pub flag: ReviewFlag,
}

/// Builds the report for already-drawn samples.
pub fn report_from_samples(
    question: &str,
    samples: &[AnswerSample],
    oracle: &EquivalenceOracle,
    gateway: &Gateway,
    threshold_bits: f64,
) -> Result<EntropyReport, EntropyError> {
    let clusters = cluster_answers(samples, oracle, gateway)?;
    let entropy_bits = semantic_entropy(&clusters);
    let n = samples.len();
    let text_of = |i: usize| samples.iter().find(|s| s.index == i).map(|s| s.text.clone()).unwrap_or_default();
    // Largest cluster; ties go to the lowest representative index.
    let best = clusters
        .iter()
        .max_by(|a, b| a.members.len().cmp(&b.members.len()).then(b.representative.index.cmp(&a.representative.index)))
        .expect("at least one cluster");
    Ok(EntropyReport {
        question: question.to_string(),
        answer: best.representative.text.clone(),
        oracle: oracle.name(),
        samples: n,
        failed_samples: 0,
        clusters: clusters
            .iter()
            .map(|c| ClusterSummary {
                representative: c.representative.index,
                members: c.members.clone(),
                texts: c.members.iter().map(|&i| text_of(i)).collect(),
                probability: c.members.len() as f64 / n as f64,
            })
            .collect(),
        entropy_bits,
        threshold_bits,
        flag: if entropy_bits > threshold_bits { ReviewFlag::Review } else { ReviewFlag::Ok },
    })
}

/// Samples `n` answers for `request`, clusters them and flags the result
/// when entropy exceeds `threshold_bits`. Samples that fail are left out of
/// the clustering and counted in `failed_samples`.
pub fn uncertainty_report(
    question: &str,
    request: &PromptRequest,
    n: usize,
    oracle: &EquivalenceOracle,
    gateway: &Gateway,
    threshold_bits: f64,
) -> Result<EntropyReport, EntropyError> {
    if n < 2 {
        return Err(EntropyError::TooFewSamples { min: 2, got: n });
    }
    let set = gateway.sample_answers(request, n)?;
    let samples = AnswerSample::numbered(set.completions.into_iter().map(|c| c.text));
    let mut report = report_from_samples(question, &samples, oracle, gateway, threshold_bits)?;
    report.failed_samples = set.failures.len();
    Ok(report)
}
