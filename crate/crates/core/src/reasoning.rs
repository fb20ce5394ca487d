//! Turns a plain-text use-case description into trade-off weights.
//!
//! An LLM client is queried several times and the parsed weights averaged.
//! When no client is configured, or nothing usable comes back, a fixed
//! keyword table supplies the weights instead.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::MetricWeights;
use crate::error::{Error, Result};

/// System message sent with every request.
pub const SYSTEM_TEMPLATE: &str = "You select evaluation trade-off weights for choosing a pretrained model. Given the use case below, return only a JSON object with numeric fields accuracy, size, complexity in [0,1] and a string field justification.";

/// Environment variable holding the LLM endpoint URL.
pub const ENDPOINT_ENV: &str = "MODELBANDIT_LLM_URL";
/// Environment variable holding the *name* of the variable with the credential.
pub const CREDENTIAL_NAME_ENV: &str = "MODELBANDIT_LLM_KEY_ENV";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Llm,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStddev {
    pub accuracy: f64,
    pub size: f64,
    pub complexity: f64,
}

impl MetricStddev {
    pub const ZERO: Self = Self {
        accuracy: 0.0,
        size: 0.0,
        complexity: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProposal {
    pub weights: MetricWeights,
    pub justification: String,
    pub provenance: Provenance,
    pub samples_used: u32,
    pub per_metric_stddev: MetricStddev,
    /// Some parsed response had a weight outside [0,1].
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub weights: MetricWeights,
    pub justification: String,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError(pub String);

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// A chat-style completion service.
pub trait LlmClient: Sync {
    fn complete(&self, system: &str, user: &str) -> std::result::Result<String, TransportError>;
}

/// Retry schedule per sample: `retries` extra attempts with doubling delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            initial_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(4),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: u32) -> Self {
        Self {
            retries,
            initial_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        self.initial_delay
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_delay)
    }
}

/// Posts `{"system": ..., "user": ...}` to a configured endpoint.
pub struct HttpLlmClient {
    endpoint: String,
    credential: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(endpoint: impl Into<String>, credential: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            credential,
            agent,
        }
    }

    /// Reads the endpoint and credential from the environment; `None` when no
    /// endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty())?;
        let credential = std::env::var(CREDENTIAL_NAME_ENV)
            .ok()
            .and_then(|name| std::env::var(name).ok());
        Some(Self::new(endpoint, credential))
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, system: &str, user: &str) -> std::result::Result<String, TransportError> {
        let body = serde_json::json!({ "system": system, "user": user }).to_string();
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.credential {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError(format!("status {status}")));
        }
        Ok(text)
    }
}

struct Profile {
    keywords: &'static [&'static str],
    weights: MetricWeights,
    justification: &'static str,
}

const fn weights(accuracy: f64, size: f64, complexity: f64) -> MetricWeights {
    MetricWeights {
        accuracy,
        size,
        complexity,
    }
}

/// Keyword classes in priority order; the first class with a hit wins.
const PROFILES: [Profile; 3] = [
    Profile {
        keywords: &["drone", "mobile", "embedded", "edge", "iot", "battery"],
        weights: weights(0.63, 0.25, 0.21),
        justification: "Resource-constrained device: accuracy still matters most, but model size limits what fits in memory and complexity drives latency and battery drain.",
    },
    Profile {
        keywords: &["autonomous", "vehicle", "real-time", "latency"],
        weights: weights(0.70, 0.10, 0.40),
        justification: "Latency-critical perception: accuracy dominates, complexity is weighted heavily because inference time bounds reaction time, size matters little on capable hardware.",
    },
    Profile {
        keywords: &["server", "datacenter", "cloud", "offline"],
        weights: weights(0.80, 0.10, 0.10),
        justification: "Server-side workload: compute and memory are plentiful, so accuracy dominates and size and complexity only break near-ties.",
    },
];

const BALANCED: Profile = Profile {
    keywords: &[],
    weights: weights(0.34, 0.33, 0.33),
    justification: "No deployment constraints recognized: accuracy, size and complexity are weighted about equally.",
};

fn fallback_profile(prompt: &str) -> &'static Profile {
    let lower = prompt.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .collect();
    PROFILES
        .iter()
        .find(|p| p.keywords.iter().any(|k| tokens.contains(k)))
        .unwrap_or(&BALANCED)
}

/// Deterministic keyword lookup used when no LLM answer is available.
pub fn fallback_weights(prompt: &str) -> MetricWeights {
    fallback_profile(prompt).weights
}

fn fallback_proposal(prompt: &str, samples: u32) -> WeightProposal {
    let profile = fallback_profile(prompt);
    WeightProposal {
        weights: profile.weights,
        justification: profile.justification.to_string(),
        provenance: Provenance::Fallback,
        samples_used: samples.max(1),
        per_metric_stddev: MetricStddev::ZERO,
        clamped: false,
    }
}

fn weights_object(v: &Value) -> Option<ParsedResponse> {
    let obj = v.as_object()?;
    let num = |k: &str| obj.get(k).and_then(Value::as_f64);
    let (a, s, c) = (num("accuracy")?, num("size")?, num("complexity")?);
    let clamp = |x: f64| x.clamp(0.0, 1.0);
    let clamped = [a, s, c].iter().any(|x| clamp(*x) != *x);
    let weights = MetricWeights {
        accuracy: clamp(a),
        size: clamp(s),
        complexity: clamp(c),
    };
    weights.validate().ok()?;
    let justification = obj
        .get("justification")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Some(ParsedResponse {
        weights,
        justification,
        clamped,
    })
}

/// Looks for a weights object in `v`, then inside any string it contains
/// (chat APIs wrap the model's text in an envelope).
fn search_value(v: &Value, depth: u32) -> Option<ParsedResponse> {
    if let Some(p) = weights_object(v) {
        return Some(p);
    }
    if depth == 0 {
        return None;
    }
    match v {
        Value::String(s) => search_text(s, depth - 1),
        Value::Array(items) => items.iter().find_map(|i| search_value(i, depth - 1)),
        Value::Object(map) => map.values().find_map(|i| search_value(i, depth - 1)),
        _ => None,
    }
}

fn search_text(text: &str, depth: u32) -> Option<ParsedResponse> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v)) => search_value(&v, depth),
            _ => None,
        }
    })
}

/// Extracts the first well-formed weights object from a response body.
/// Weights are clamped into [0,1]; `clamped` records whether that happened.
pub fn parse_llm_response(text: &str) -> Result<ParsedResponse> {
    search_text(text, 6).ok_or_else(|| Error::Parse("no weights object in response".into()))
}

fn query_with_retry(client: &dyn LlmClient, prompt: &str, policy: &RetryPolicy) -> Option<ParsedResponse> {
    for attempt in 0..=policy.retries {
        match client.complete(SYSTEM_TEMPLATE, prompt) {
            Ok(body) => return parse_llm_response(&body).ok(),
            Err(_) if attempt < policy.retries => thread::sleep(policy.delay(attempt)),
            Err(_) => return None,
        }
    }
    None
}

/// Welford's running update; a constant column gives exactly that constant
/// and zero spread.
fn mean_and_stddev(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    if values.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (m2 / (values.len() - 1) as f64).sqrt())
}

pub fn propose_weights(prompt: &str, n_samples: u32, client: Option<&dyn LlmClient>) -> Result<WeightProposal> {
    propose_weights_with(prompt, n_samples, client, &RetryPolicy::default())
}

/// Queries `client` `n_samples` times and averages whatever parses. With no
/// client, or nothing parsed, returns the keyword fallback.
pub fn propose_weights_with(
    prompt: &str,
    n_samples: u32,
    client: Option<&dyn LlmClient>,
    policy: &RetryPolicy,
) -> Result<WeightProposal> {
    if prompt.trim().is_empty() {
        return Err(Error::Config {
            field: "prompt",
            reason: "must be nonempty".into(),
        });
    }
    if n_samples == 0 {
        return Err(Error::Config {
            field: "samples",
            reason: "must be at least 1".into(),
        });
    }
    let Some(client) = client else {
        return Ok(fallback_proposal(prompt, n_samples));
    };

    let query = |_: u32| query_with_retry(client, prompt, policy);
    let parsed: Vec<ParsedResponse> = crate::if_parallel!(
        {
            use rayon::prelude::*;
            (0..n_samples).into_par_iter().filter_map(query).collect()
        },
        (0..n_samples).filter_map(query).collect()
    );
    if parsed.is_empty() {
        return Ok(fallback_proposal(prompt, n_samples));
    }

    let column = |f: fn(&MetricWeights) -> f64| -> Vec<f64> { parsed.iter().map(|p| f(&p.weights)).collect() };
    let (acc, acc_sd) = mean_and_stddev(&column(|w| w.accuracy));
    let (size, size_sd) = mean_and_stddev(&column(|w| w.size));
    let (cx, cx_sd) = mean_and_stddev(&column(|w| w.complexity));
    Ok(WeightProposal {
        weights: MetricWeights {
            accuracy: acc.clamp(0.0, 1.0),
            size: size.clamp(0.0, 1.0),
            complexity: cx.clamp(0.0, 1.0),
        },
        justification: parsed[0].justification.clone(),
        provenance: Provenance::Llm,
        samples_used: parsed.len() as u32,
        per_metric_stddev: MetricStddev {
            accuracy: acc_sd,
            size: size_sd,
            complexity: cx_sd,
        },
        clamped: parsed.iter().any(|p| p.clamped),
    })
}
