//! HTTP API for weight proposals and selection experiments.
//!
//! Fixtures (pool and trace files) are uploaded by name, experiments run on
//! blocking worker threads, and clients poll for progress. Every report body
//! is the same canonical text the command-line tool prints.

pub mod registry;

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use modelbandit::canonical::to_canonical_string;
use modelbandit::reasoning::{propose_weights_with, LlmClient, Provenance, RetryPolicy};
use modelbandit::{
    generate_synthetic, load_pool, load_trace, run_aggregate, Dataset, EvalBackend, ExperimentConfig, MetricWeights,
    ModelPool, Strategy, SyntheticSpec,
};
use serde::Serialize;
use serde_json::{json, Map, Value};

use registry::{content_digest, ExperimentRecord, Fixture, FixtureData, FixtureKind, Progress, Registry, Status};

#[derive(Clone)]
pub struct AppState {
    registry: Arc<Registry>,
    llm: Option<Arc<dyn LlmClient + Send + Sync>>,
    retry: RetryPolicy,
}

impl AppState {
    pub fn new(persist_dir: Option<PathBuf>, llm: Option<Arc<dyn LlmClient + Send + Sync>>) -> Self {
        Self {
            registry: Arc::new(Registry::new(persist_dir)),
            llm,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/fixtures/{name}", put(put_fixture))
        .route("/api/reason", post(reason))
        .route("/api/experiments", post(create_experiment))
        .route("/api/experiments/{id}", get(get_experiment).delete(cancel_experiment))
        .route("/api/experiments/{id}/report", get(get_report))
        .layer(DefaultBodyLimit::max(256 * 1024 * 1024))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// 4xx/5xx with a JSON `{"error": ..., "field"?: ...}` body.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.to_string()),
        }
    }
}

impl From<modelbandit::Error> for ApiError {
    fn from(e: modelbandit::Error) -> Self {
        match e {
            modelbandit::Error::Config { field, reason } => {
                ApiError::field(field, format!("invalid `{field}`: {reason}"))
            }
            other => ApiError::new(StatusCode::BAD_REQUEST, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = Map::new();
        body.insert("error".into(), Value::String(self.message));
        if let Some(f) = self.field {
            body.insert("field".into(), Value::String(f));
        }
        canonical_response(self.status, &Value::Object(body))
    }
}

fn canonical_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    text_response(status, to_canonical_string(value))
}

fn text_response(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn parse_json(body: &Bytes) -> Result<Value, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON body: {e}")))
}

// ---------------------------------------------------------------------------
// Fixtures

async fn put_fixture(
    State(state): State<AppState>,
    Path(name): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let text =
        String::from_utf8(body.to_vec()).map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "body must be UTF-8"))?;
    let digest = content_digest(&text);
    let reply = |status, kind| canonical_response(status, &json!({ "name": name, "kind": kind, "digest": digest }));

    if let Some(existing) = state.registry.fixtures.read().expect("fixtures lock").get(&name) {
        return if existing.digest == digest {
            Ok(reply(StatusCode::OK, existing.kind))
        } else {
            Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("fixture `{name}` already exists with different content"),
            ))
        };
    }

    let parsed = tokio::task::spawn_blocking(move || -> Result<Fixture, ApiError> {
        let data = if text.trim_start().starts_with("model_id") {
            let (table, dataset) = load_trace(&text)?;
            FixtureData::Trace(Arc::new(table), Arc::new(dataset))
        } else {
            FixtureData::Pool(Arc::new(load_pool(&text)?))
        };
        let kind = match data {
            FixtureData::Pool(_) => FixtureKind::Pool,
            FixtureData::Trace(..) => FixtureKind::Trace,
        };
        Ok(Fixture {
            kind,
            digest: content_digest(&text),
            data,
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let kind = parsed.kind;
    let mut fixtures = state.registry.fixtures.write().expect("fixtures lock");
    match fixtures.get(&name) {
        Some(existing) if existing.digest != digest => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("fixture `{name}` already exists with different content"),
        )),
        Some(_) => Ok(reply(StatusCode::OK, kind)),
        None => {
            fixtures.insert(name.clone(), parsed);
            Ok(reply(StatusCode::CREATED, kind))
        }
    }
}

// ---------------------------------------------------------------------------
// Reasoning

async fn reason(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let v = parse_json(&body)?;
    let prompt = v.get("prompt").and_then(Value::as_str).unwrap_or_default().to_string();
    if prompt.trim().is_empty() {
        return Err(ApiError::field("prompt", "prompt must be a nonempty string"));
    }
    let samples = match v.get("samples") {
        None | Some(Value::Null) => 100,
        Some(s) => s
            .as_u64()
            .filter(|n| (1..=u64::from(u32::MAX)).contains(n))
            .ok_or_else(|| ApiError::field("samples", "samples must be a positive integer"))? as u32,
    };
    let offline = v.get("offline").and_then(Value::as_bool).unwrap_or(false);
    let allow_fallback = v.get("allow_fallback").and_then(Value::as_bool).unwrap_or(true);

    let client = if offline { None } else { state.llm.clone() };
    let had_client = client.is_some();
    let retry = state.retry;
    let proposal = tokio::task::spawn_blocking(move || {
        let c: Option<&dyn LlmClient> = client.as_deref().map(|c| c as &dyn LlmClient);
        propose_weights_with(&prompt, samples, c, &retry)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    if had_client && proposal.provenance == Provenance::Fallback && !allow_fallback {
        return Err(ApiError::new(
            StatusCode::BAD_GATEWAY,
            "LLM produced no usable response",
        ));
    }
    Ok(canonical_response(StatusCode::OK, &proposal))
}

// ---------------------------------------------------------------------------
// Experiments

fn parse_weights(v: Option<&Value>) -> Result<MetricWeights, ApiError> {
    let bad = || {
        ApiError::field(
            "weights",
            "weights must be {accuracy,size,complexity} numbers in [0,1], not all zero",
        )
    };
    let w = match v {
        Some(Value::Object(o)) => {
            let num = |k: &str| o.get(k).and_then(Value::as_f64).ok_or_else(bad);
            MetricWeights::new(num("accuracy")?, num("size")?, num("complexity")?)
        }
        Some(Value::Array(a)) if a.len() == 3 => {
            let nums: Option<Vec<f64>> = a.iter().map(Value::as_f64).collect();
            let nums = nums.ok_or_else(bad)?;
            MetricWeights::new(nums[0], nums[1], nums[2])
        }
        Some(Value::String(s)) => MetricWeights::from_str(s),
        _ => return Err(bad()),
    };
    w.map_err(|_| bad())
}

fn parse_u64(v: &Value, field: &str, default: Option<u64>) -> Result<u64, ApiError> {
    match v.get(field) {
        None | Some(Value::Null) => default.ok_or_else(|| ApiError::field(field, format!("`{field}` is required"))),
        Some(x) => x
            .as_u64()
            .ok_or_else(|| ApiError::field(field, format!("`{field}` must be a nonnegative integer"))),
    }
}

fn parse_config(v: &Value) -> Result<ExperimentConfig, ApiError> {
    let strategy = v
        .get("strategy")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::field("strategy", "`strategy` must be one of epsilon_greedy, ucb, thompson"))
        .and_then(|s| Strategy::from_str(s).map_err(ApiError::from))?;
    let budget = parse_u64(v, "budget", None)?;
    let seed = parse_u64(v, "seed", Some(0))?;
    let repetitions = parse_u64(v, "repetitions", Some(1))?;
    let repetitions = u32::try_from(repetitions)
        .ok()
        .filter(|r| *r >= 1)
        .ok_or_else(|| ApiError::field("repetitions", "`repetitions` must be a positive integer"))?;
    let epsilon = match v.get("epsilon") {
        None | Some(Value::Null) => 0.1,
        Some(e) => e
            .as_f64()
            .ok_or_else(|| ApiError::field("epsilon", "`epsilon` must be a number in [0,1]"))?,
    };
    let config = ExperimentConfig {
        strategy,
        budget,
        epsilon,
        seed,
        weights: parse_weights(v.get("weights"))?,
        repetitions,
    };
    config.validate()?;
    Ok(config)
}

type Workload = (Arc<ModelPool>, Arc<dyn EvalBackend>, Arc<Dataset>);

fn resolve_workload(state: &AppState, v: &Value) -> Result<Workload, ApiError> {
    if let Some(spec) = v.get("synthetic_spec").filter(|s| !s.is_null()) {
        let samples = parse_u64(spec, "samples", None)
            .map_err(|_| ApiError::field("synthetic_spec", "`samples` must be a positive integer"))?;
        let seed = parse_u64(spec, "seed", Some(0))
            .map_err(|_| ApiError::field("synthetic_spec", "`seed` must be a nonnegative integer"))?;
        let spec = match (spec.get("accuracies"), spec.get("arms")) {
            (Some(Value::Array(a)), _) => SyntheticSpec {
                accuracies: a
                    .iter()
                    .map(Value::as_f64)
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| ApiError::field("synthetic_spec", "`accuracies` must be numbers"))?,
                samples: samples as usize,
                seed,
            },
            (_, Some(k)) => {
                let k = k
                    .as_u64()
                    .filter(|k| *k >= 1)
                    .ok_or_else(|| ApiError::field("synthetic_spec", "`arms` must be a positive integer"))?;
                SyntheticSpec::size_correlated(k as usize, samples as usize, seed)
            }
            _ => return Err(ApiError::field("synthetic_spec", "needs `accuracies` or `arms`")),
        };
        let fx = generate_synthetic(&spec).map_err(|e| ApiError::field("synthetic_spec", e.to_string()))?;
        return Ok((Arc::new(fx.pool), Arc::new(fx.backend), Arc::new(fx.dataset)));
    }

    let name = |field: &str| -> Result<String, ApiError> {
        v.get(field)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ApiError::field(field, format!("`{field}` must name an uploaded fixture")))
    };
    let pool_ref = name("pool_ref")?;
    let trace_ref = name("trace_ref")?;
    let fixtures = state.registry.fixtures.read().expect("fixtures lock");
    let pool = match fixtures.get(&pool_ref).map(|f| &f.data) {
        Some(FixtureData::Pool(p)) => p.clone(),
        _ => {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                format!("unknown pool fixture `{pool_ref}`"),
            ))
        }
    };
    let (table, dataset) = match fixtures.get(&trace_ref).map(|f| &f.data) {
        Some(FixtureData::Trace(t, d)) => (t.clone(), d.clone()),
        _ => {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                format!("unknown trace fixture `{trace_ref}`"),
            ))
        }
    };
    if !table.covers(&pool, &dataset) {
        return Err(ApiError::field(
            "trace_ref",
            format!("trace `{trace_ref}` does not cover pool `{pool_ref}`"),
        ));
    }
    Ok((pool, table, dataset))
}

async fn create_experiment(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let v = parse_json(&body)?;
    let config = parse_config(&v)?;
    let (pool, backend, dataset) = resolve_workload(&state, &v)?;

    let per_run = config.budget.min((pool.len() * dataset.len()) as u64);
    let progress = Arc::new(Progress::new(per_run * u64::from(config.repetitions)));
    let id = uuid::Uuid::new_v4().to_string();
    state.registry.experiments.write().expect("registry lock").insert(
        id.clone(),
        ExperimentRecord {
            status: Status::Pending,
            pool: pool.clone(),
            progress: progress.clone(),
            report: None,
            report_text: None,
            error: None,
        },
    );

    let registry = state.registry.clone();
    let worker_id = id.clone();
    tokio::task::spawn_blocking(move || {
        registry.update(&worker_id, |r| r.status = Status::Running);
        let outcome = run_aggregate(&config, &pool, backend.as_ref(), &dataset, progress.as_ref());
        match outcome {
            Ok(report) => {
                let text = report.to_canonical_string();
                if let Some(dir) = &registry.persist_dir {
                    if let Err(e) = std::fs::write(dir.join(format!("{worker_id}.json")), &text) {
                        tracing::warn!("could not persist report {worker_id}: {e}");
                    }
                }
                registry.update(&worker_id, |r| {
                    r.report = Some(report);
                    r.report_text = Some(text);
                    r.status = Status::Done;
                });
            }
            Err(e) => registry.update(&worker_id, |r| {
                r.error = Some(e.to_string());
                r.status = Status::Failed;
            }),
        }
    });

    Ok(canonical_response(StatusCode::ACCEPTED, &json!({ "id": id })))
}

async fn get_experiment(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let experiments = state.registry.experiments.read().expect("registry lock");
    let rec = experiments
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown experiment `{id}`")))?;

    let pulls = rec.progress.pulls();
    let expected = rec.progress.expected();
    let progress = match rec.status {
        Status::Done => 1.0,
        _ if expected == 0 => 0.0,
        _ => (pulls as f64 / expected as f64).min(1.0),
    };
    let winners = rec.progress.winners();
    let mut wins = vec![0u64; rec.pool.len()];
    for w in &winners {
        wins[*w] += 1;
    }
    let mut board: Vec<usize> = (0..wins.len()).filter(|a| wins[*a] > 0).collect();
    board.sort_by(|a, b| wins[*b].cmp(&wins[*a]).then(a.cmp(b)));
    let leaderboard: Vec<Value> = board
        .into_iter()
        .map(|a| json!({ "arm": a, "id": rec.pool.candidates()[a].id, "wins": wins[a] }))
        .collect();

    let mut body = Map::new();
    body.insert("id".into(), json!(id));
    body.insert("status".into(), json!(rec.status));
    body.insert("progress".into(), json!(progress));
    body.insert("pulls_completed".into(), json!(pulls));
    body.insert("pulls_expected".into(), json!(expected));
    body.insert("repetitions_completed".into(), json!(winners.len()));
    body.insert("leaderboard".into(), Value::Array(leaderboard));
    if let Some(report) = &rec.report {
        body.insert(
            "report".into(),
            serde_json::to_value(report).expect("report serializes"),
        );
    }
    if let Some(err) = &rec.error {
        body.insert("error".into(), json!(err));
    }
    Ok(canonical_response(StatusCode::OK, &Value::Object(body)))
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let experiments = state.registry.experiments.read().expect("registry lock");
    let rec = experiments
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown experiment `{id}`")))?;
    match (&rec.status, &rec.report_text) {
        (Status::Done, Some(text)) => Ok(text_response(StatusCode::OK, text.clone())),
        (Status::Failed, _) => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("experiment failed: {}", rec.error.as_deref().unwrap_or("unknown error")),
        )),
        _ => Err(ApiError::new(StatusCode::CONFLICT, "experiment has not finished")),
    }
}

async fn cancel_experiment(Path(_id): Path<String>) -> ApiError {
    ApiError::new(StatusCode::NOT_IMPLEMENTED, "cancellation is not supported")
}
