//! Candidate pool, trade-off weights, experiment configuration and the
//! static-metric normalization shared by every selector.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One pretrained model: an arm of the bandit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub id: String,
    /// Accuracy on the source benchmark, as a fraction.
    pub benchmark_accuracy: f64,
    pub size_mb: f64,
    pub complexity_mmac: f64,
    #[serde(default)]
    pub source: String,
}

impl ModelCandidate {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("<empty id>", "id must be nonempty"));
        }
        if !(0.0..=1.0).contains(&self.benchmark_accuracy) {
            return Err(Error::validation(
                &self.id,
                format!("benchmark_accuracy {} outside [0,1]", self.benchmark_accuracy),
            ));
        }
        if !(self.size_mb.is_finite() && self.size_mb > 0.0) {
            return Err(Error::validation(
                &self.id,
                format!("size_mb {} must be positive", self.size_mb),
            ));
        }
        if !(self.complexity_mmac.is_finite() && self.complexity_mmac > 0.0) {
            return Err(Error::validation(
                &self.id,
                format!("complexity_mmac {} must be positive", self.complexity_mmac),
            ));
        }
        Ok(())
    }
}

/// Ordered, validated list of candidates. The order is the arm index order
/// and drives every tie-break.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPool {
    candidates: Vec<ModelCandidate>,
}

impl ModelPool {
    pub fn new(candidates: Vec<ModelCandidate>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::validation("<pool>", "pool must be nonempty"));
        }
        let mut seen = HashSet::with_capacity(candidates.len());
        for c in &candidates {
            c.validate()?;
            if !seen.insert(c.id.as_str()) {
                return Err(Error::validation(&c.id, "duplicate id"));
            }
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[ModelCandidate] {
        &self.candidates
    }

    pub fn get(&self, arm: usize) -> Option<&ModelCandidate> {
        self.candidates.get(arm)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.id == id)
    }

    /// Canonical pool file: a pretty-printed JSON array with a trailing newline.
    pub fn to_canonical_string(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.candidates).expect("pool records always serialize");
        out.push('\n');
        out
    }
}

/// Parses a pool file. JSON arrays and CSV (with the fixed header) are both
/// accepted; the format is detected from the first non-blank character.
pub fn load_pool(text: &str) -> Result<ModelPool> {
    let trimmed = text.trim_start_matches('\u{feff}').trim_start();
    let candidates: Vec<ModelCandidate> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| Error::parse(format!("pool json: {e}")))?
    } else {
        parse_pool_csv(trimmed)?
    };
    ModelPool::new(candidates)
}

fn parse_pool_csv(text: &str) -> Result<Vec<ModelCandidate>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(format!("pool csv: {e}")))?
        .clone();
    let expected = ["id", "benchmark_accuracy", "size_mb", "complexity_mmac", "source"];
    let got: Vec<&str> = headers.iter().collect();
    if got != expected && got != expected[..4] {
        return Err(Error::parse(format!(
            "pool csv header must be `{}`, got `{}`",
            expected.join(","),
            got.join(",")
        )));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(format!("pool csv row {}: {e}", i + 1))))
        .collect()
}

/// Trade-off weights for accuracy, size and complexity. They are not
/// renormalized; the sum may exceed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    pub accuracy: f64,
    pub size: f64,
    pub complexity: f64,
}

impl MetricWeights {
    pub fn new(accuracy: f64, size: f64, complexity: f64) -> Result<Self> {
        let w = Self {
            accuracy,
            size,
            complexity,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("size", self.size),
            ("complexity", self.complexity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config {
                    field: "weights",
                    reason: format!("{name} weight {v} outside [0,1]"),
                });
            }
        }
        if self.accuracy == 0.0 && self.size == 0.0 && self.complexity == 0.0 {
            return Err(Error::Config {
                field: "weights",
                reason: "at least one weight must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.accuracy + self.size + self.complexity
    }
}

impl FromStr for MetricWeights {
    type Err = Error;

    /// `accuracy,size,complexity`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Config {
                field: "weights",
                reason: format!("expected accuracy,size,complexity, got `{s}`"),
            });
        }
        let mut vals = [0.0; 3];
        for (slot, p) in vals.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| Error::Config {
                field: "weights",
                reason: format!("`{p}` is not a number"),
            })?;
        }
        MetricWeights::new(vals[0], vals[1], vals[2])
    }
}

impl fmt::Display for MetricWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.accuracy, self.size, self.complexity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmScores {
    pub size: f64,
    pub complexity: f64,
}

/// Per-arm normalized static scores in [0,1]; smaller raw metric scores higher.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticScores {
    arms: Vec<ArmScores>,
}

impl StaticScores {
    pub fn from_vec(arms: Vec<ArmScores>) -> Self {
        Self { arms }
    }

    pub fn get(&self, arm: usize) -> ArmScores {
        self.arms[arm]
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArmScores> {
        self.arms.iter()
    }

    /// Weighted contribution of the static metrics for one arm.
    pub fn static_term(&self, arm: usize, w: &MetricWeights) -> f64 {
        let s = self.arms[arm];
        w.size * s.size + w.complexity * s.complexity
    }
}

/// Inverted min-max normalization over the pool. A column with no spread
/// scores 1.0 for every arm.
pub fn normalize_static(pool: &ModelPool) -> StaticScores {
    let sizes: Vec<f64> = pool.candidates().iter().map(|c| c.size_mb).collect();
    let complexities: Vec<f64> = pool.candidates().iter().map(|c| c.complexity_mmac).collect();
    let size_scores = inverted_min_max(&sizes);
    let complexity_scores = inverted_min_max(&complexities);
    StaticScores {
        arms: size_scores
            .into_iter()
            .zip(complexity_scores)
            .map(|(size, complexity)| ArmScores { size, complexity })
            .collect(),
    }
}

fn inverted_min_max(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (max - v) / range).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    EpsilonGreedy,
    Ucb,
    Thompson,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::EpsilonGreedy => "epsilon_greedy",
            Strategy::Ucb => "ucb",
            Strategy::Thompson => "thompson",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon_greedy" | "epsilon-greedy" => Ok(Strategy::EpsilonGreedy),
            "ucb" => Ok(Strategy::Ucb),
            "thompson" => Ok(Strategy::Thompson),
            other => Err(Error::Config {
                field: "strategy",
                reason: format!("unknown strategy `{other}`"),
            }),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    /// Total pulls across all arms in one experiment.
    pub budget: u64,
    pub epsilon: f64,
    pub seed: u64,
    pub weights: MetricWeights,
    pub repetitions: u32,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config {
                field: "epsilon",
                reason: format!("{} outside [0,1]", self.epsilon),
            });
        }
        if self.repetitions == 0 {
            return Err(Error::Config {
                field: "repetitions",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}
