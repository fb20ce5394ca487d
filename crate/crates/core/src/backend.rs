//! Evaluation backends: the source of per-(model, sample) correctness bits.
//!
//! Three implementations share one trait: a cached trace table, a seeded
//! synthetic simulator, and an HTTP client for a remote evaluator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{load_pool, ModelCandidate, ModelPool};
use crate::error::{Error, Result};

/// Ordered target samples. Order matters only for reproducible permutations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    sample_ids: Vec<String>,
}

impl Dataset {
    pub fn new(sample_ids: Vec<String>) -> Result<Self> {
        if sample_ids.is_empty() {
            return Err(Error::validation("<dataset>", "dataset must be nonempty"));
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(id, "duplicate sample id"));
            }
        }
        Ok(Self { sample_ids })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PullResult {
    pub arm: usize,
    pub sample_id: String,
    pub correct: bool,
    pub cost_mmac: f64,
}

/// Source of correctness bits. Implementations must tolerate concurrent calls.
pub trait EvalBackend: Send + Sync {
    fn correct(&self, arm: usize, model_id: &str, sample_id: &str) -> Result<bool>;

    fn correct_batch(&self, arm: usize, model_id: &str, sample_ids: &[String]) -> Result<Vec<bool>> {
        sample_ids.iter().map(|s| self.correct(arm, model_id, s)).collect()
    }
}

impl<B: EvalBackend + ?Sized> EvalBackend for &B {
    fn correct(&self, arm: usize, model_id: &str, sample_id: &str) -> Result<bool> {
        (**self).correct(arm, model_id, sample_id)
    }

    fn correct_batch(&self, arm: usize, model_id: &str, sample_ids: &[String]) -> Result<Vec<bool>> {
        (**self).correct_batch(arm, model_id, sample_ids)
    }
}

/// One pull: evaluate `arm` on `sample_id` and attach the arm's cost.
pub fn evaluate<B: EvalBackend + ?Sized>(
    backend: &B,
    pool: &ModelPool,
    arm: usize,
    sample_id: &str,
) -> Result<PullResult> {
    let model = pool
        .get(arm)
        .ok_or_else(|| Error::validation(format!("arm {arm}"), "arm not in pool"))?;
    let correct = backend.correct(arm, &model.id, sample_id)?;
    Ok(PullResult {
        arm,
        sample_id: sample_id.to_string(),
        correct,
        cost_mmac: model.complexity_mmac,
    })
}

/// Exact per-arm accuracy over the whole dataset.
pub fn exact_accuracies<B: EvalBackend + ?Sized>(backend: &B, pool: &ModelPool, dataset: &Dataset) -> Result<Vec<f64>> {
    let n = dataset.len() as f64;
    pool.candidates()
        .iter()
        .enumerate()
        .map(|(arm, m)| {
            let bits = backend.correct_batch(arm, &m.id, dataset.sample_ids())?;
            Ok(bits.iter().filter(|b| **b).count() as f64 / n)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trace table

pub const TRACE_HEADER: &str = "model_id,sample_id,correct";

/// Cached predictions: model id -> sample id -> correct.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceTable {
    rows: BTreeMap<String, BTreeMap<String, bool>>,
}

impl TraceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a row; a second row for the same pair must agree.
    pub fn insert(&mut self, model_id: &str, sample_id: &str, correct: bool) -> Result<()> {
        let samples = self.rows.entry(model_id.to_string()).or_default();
        match samples.get(sample_id) {
            Some(&prev) if prev != correct => Err(Error::TraceConflict {
                model_id: model_id.to_string(),
                sample_id: sample_id.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                samples.insert(sample_id.to_string(), correct);
                Ok(())
            }
        }
    }

    pub fn get(&self, model_id: &str, sample_id: &str) -> Option<bool> {
        self.rows.get(model_id)?.get(sample_id).copied()
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// True when every (model, sample) pair of the pool and dataset is present.
    pub fn covers(&self, pool: &ModelPool, dataset: &Dataset) -> bool {
        pool.candidates().iter().all(|m| {
            self.rows
                .get(&m.id)
                .is_some_and(|s| dataset.sample_ids().iter().all(|id| s.contains_key(id)))
        })
    }

    /// Canonical CSV: fixed header, rows sorted by model id then sample id.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 24 + TRACE_HEADER.len() + 1);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for (model, samples) in &self.rows {
            for (sample, correct) in samples {
                out.push_str(model);
                out.push(',');
                out.push_str(sample);
                out.push_str(if *correct { ",1\n" } else { ",0\n" });
            }
        }
        out
    }
}

impl EvalBackend for TraceTable {
    fn correct(&self, _arm: usize, model_id: &str, sample_id: &str) -> Result<bool> {
        self.get(model_id, sample_id).ok_or_else(|| Error::TraceMiss {
            model_id: model_id.to_string(),
            sample_id: sample_id.to_string(),
        })
    }
}

/// Parses a trace CSV. The dataset lists sample ids in first-appearance order.
pub fn load_trace(text: &str) -> Result<(TraceTable, Dataset)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.trim_start_matches('\u{feff}').as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(format!("trace csv: {e}")))?;
    let got: Vec<&str> = headers.iter().collect();
    if got.join(",") != TRACE_HEADER {
        return Err(Error::parse(format!(
            "trace header must be `{TRACE_HEADER}`, got `{}`",
            got.join(",")
        )));
    }

    let mut table = TraceTable::new();
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(format!("trace row {}: {e}", i + 1)))?;
        if record.len() != 3 {
            return Err(Error::parse(format!("trace row {}: expected 3 fields", i + 1)));
        }
        let (model, sample, bit) = (&record[0], &record[1], &record[2]);
        if model.is_empty() || sample.is_empty() {
            return Err(Error::parse(format!("trace row {}: empty id", i + 1)));
        }
        let correct = match bit {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(format!(
                    "trace row {}: correct must be 0 or 1, got `{other}`",
                    i + 1
                )))
            }
        };
        table.insert(model, sample, correct)?;
        if seen.insert(sample.to_string()) {
            samples.push(sample.to_string());
        }
    }
    Ok((table, Dataset::new(samples)?))
}

// ---------------------------------------------------------------------------
// Synthetic simulator

const SIZE_BOUNDS_MB: (f64, f64) = (22.0, 2581.0);
const COMPLEXITY_BOUNDS_MMAC: (f64, f64) = (229.0, 127_750.0);

/// Bernoulli simulator whose bit for (arm, sample) is a pure function of
/// (seed, arm, sample id), so pull order never changes the answer.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBackend {
    accuracies: Vec<f64>,
    seed: u64,
}

impl SyntheticBackend {
    pub fn new(accuracies: Vec<f64>, seed: u64) -> Result<Self> {
        for (arm, p) in accuracies.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::validation(
                    format!("arm {arm}"),
                    format!("accuracy {p} outside [0,1]"),
                ));
            }
        }
        Ok(Self { accuracies, seed })
    }

    pub fn accuracies(&self) -> &[f64] {
        &self.accuracies
    }

    fn bit(&self, arm: usize, p: f64, sample_id: &str) -> bool {
        unit_hash(self.seed, arm as u64, sample_id) < p
    }
}

impl EvalBackend for SyntheticBackend {
    fn correct(&self, arm: usize, _model_id: &str, sample_id: &str) -> Result<bool> {
        let p = *self
            .accuracies
            .get(arm)
            .ok_or_else(|| Error::validation(format!("arm {arm}"), "arm not simulated"))?;
        Ok(self.bit(arm, p, sample_id))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Uniform in [0,1) derived from (seed, arm, sample).
fn unit_hash(seed: u64, arm: u64, sample_id: &str) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ arm) ^ fnv1a(sample_id));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// True accuracy of each arm; the pool size is its length.
    pub accuracies: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Accuracies that grow with model size and complexity, plus noise, in the
    /// range observed for hub image classifiers on a hard target set.
    pub fn size_correlated(arms: usize, samples: usize, seed: u64) -> Self {
        let pool = generate_pool(arms, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xacc0));
        let accuracies = pool
            .candidates()
            .iter()
            .map(|m| {
                let scale = (log_fraction(m.size_mb, SIZE_BOUNDS_MB)
                    + log_fraction(m.complexity_mmac, COMPLEXITY_BOUNDS_MMAC))
                    / 2.0;
                let noise = rng.random_range(-0.06..0.06);
                round_to((0.08 + 0.32 * scale + noise).clamp(0.0, 1.0), 4)
            })
            .collect();
        Self {
            accuracies,
            samples,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub pool: ModelPool,
    pub dataset: Dataset,
    pub table: TraceTable,
    pub backend: SyntheticBackend,
}

fn log_fraction(v: f64, (lo, hi): (f64, f64)) -> f64 {
    ((v.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(0.0, 1.0)
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}

/// Pool of `arms` synthetic models with log-uniform size and complexity inside
/// the hub's observed bounds. Benchmark accuracies are placeholders until a
/// fixture assigns them.
pub fn generate_pool(arms: usize, seed: u64) -> ModelPool {
    let arms = arms.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x9001));
    let width = digits(arms - 1).max(3);
    let candidates = (0..arms)
        .map(|i| {
            let size = round_to(log_uniform(&mut rng, SIZE_BOUNDS_MB), 1).clamp(SIZE_BOUNDS_MB.0, SIZE_BOUNDS_MB.1);
            let mmac = log_uniform(&mut rng, COMPLEXITY_BOUNDS_MMAC)
                .round()
                .clamp(COMPLEXITY_BOUNDS_MMAC.0, COMPLEXITY_BOUNDS_MMAC.1);
            ModelCandidate {
                id: format!("model_{i:0width$}"),
                benchmark_accuracy: 0.5,
                size_mb: size,
                complexity_mmac: mmac,
                source: "synthetic".to_string(),
            }
        })
        .collect();
    ModelPool::new(candidates).expect("generated pool is valid")
}

fn digits(n: usize) -> usize {
    n.to_string().len()
}

pub fn synthetic_dataset(samples: usize) -> Dataset {
    let samples = samples.max(1);
    let width = digits(samples - 1).max(3);
    Dataset::new((0..samples).map(|i| format!("s{i:0width$}")).collect()).expect("generated sample ids are unique")
}

/// Complete table, pool and dataset for a synthetic regime. Benchmark
/// accuracy sits above the target accuracy with small noise, mimicking the
/// source/target domain gap.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticFixture> {
    if spec.accuracies.is_empty() || spec.samples == 0 {
        return Err(Error::Config {
            field: "synthetic_spec",
            reason: "needs at least one arm and one sample".into(),
        });
    }
    let backend = SyntheticBackend::new(spec.accuracies.clone(), spec.seed)?;
    let base = generate_pool(spec.accuracies.len(), spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(spec.seed ^ 0xbe4c));
    let candidates = base
        .candidates()
        .iter()
        .zip(&spec.accuracies)
        .map(|(m, p)| {
            let gap = 0.6 * (1.0 - p) + rng.random_range(-0.04..0.04);
            ModelCandidate {
                benchmark_accuracy: round_to((p + gap).clamp(0.0, 1.0), 4),
                ..m.clone()
            }
        })
        .collect();
    let pool = ModelPool::new(candidates)?;
    let dataset = synthetic_dataset(spec.samples);

    let mut table = TraceTable::new();
    for (arm, m) in pool.candidates().iter().enumerate() {
        for s in dataset.sample_ids() {
            table.insert(&m.id, s, backend.correct(arm, &m.id, s)?)?;
        }
    }
    Ok(SyntheticFixture {
        pool,
        dataset,
        table,
        backend,
    })
}

// ---------------------------------------------------------------------------
// Remote evaluator client

#[derive(Serialize)]
struct EvaluateRequest<'a> {
    model_id: &'a str,
    sample_ids: &'a [String],
}

#[derive(Deserialize)]
struct EvaluateResponse {
    results: Vec<EvaluateItem>,
}

#[derive(Deserialize)]
struct EvaluateItem {
    sample_id: String,
    correct: u8,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Client for the remote evaluator protocol (`GET /models`, `POST /evaluate`).
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn fetch_pool(&self) -> Result<ModelPool> {
        let url = format!("{}/models", self.base_url);
        let mut resp = self.agent.get(&url).call().map_err(|e| Error::Remote {
            model_id: "<models>".into(),
            reason: e.to_string(),
        })?;
        let body = resp.body_mut().read_to_string().map_err(|e| Error::Remote {
            model_id: "<models>".into(),
            reason: e.to_string(),
        })?;
        if resp.status() != 200 {
            return Err(Error::Remote {
                model_id: "<models>".into(),
                reason: format!("status {}: {body}", resp.status()),
            });
        }
        load_pool(&body)
    }

    fn post_evaluate(&self, model_id: &str, sample_ids: &[String]) -> Result<Vec<bool>> {
        let remote_err = |reason: String| Error::Remote {
            model_id: model_id.to_string(),
            reason,
        };
        let body = serde_json::to_string(&EvaluateRequest { model_id, sample_ids }).expect("request serializes");
        let url = format!("{}/evaluate", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| remote_err(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| remote_err(e.to_string()))?;
        if status != 200 {
            let detail = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            return Err(remote_err(format!("status {status}: {detail}")));
        }
        let parsed: EvaluateResponse =
            serde_json::from_str(&text).map_err(|e| remote_err(format!("bad response: {e}")))?;
        let by_id: HashMap<&str, u8> = parsed
            .results
            .iter()
            .map(|r| (r.sample_id.as_str(), r.correct))
            .collect();
        sample_ids
            .iter()
            .map(|s| match by_id.get(s.as_str()) {
                Some(0) => Ok(false),
                Some(1) => Ok(true),
                Some(v) => Err(remote_err(format!("sample `{s}`: correct must be 0 or 1, got {v}"))),
                None => Err(remote_err(format!("sample `{s}` missing from response"))),
            })
            .collect()
    }
}

impl EvalBackend for RemoteBackend {
    fn correct(&self, _arm: usize, model_id: &str, sample_id: &str) -> Result<bool> {
        let ids = [sample_id.to_string()];
        Ok(self.post_evaluate(model_id, &ids)?[0])
    }

    fn correct_batch(&self, _arm: usize, model_id: &str, sample_ids: &[String]) -> Result<Vec<bool>> {
        self.post_evaluate(model_id, sample_ids)
    }
}
