use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use modelbandit::reasoning::{LlmClient, RetryPolicy, TransportError};
use modelbandit::{
    generate_synthetic, run_aggregate, ExperimentConfig, MetricWeights, Silent, Strategy, SyntheticSpec,
};
use modelbandit_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Constant(&'static str, AtomicUsize);

impl LlmClient for Constant {
    fn complete(&self, _system: &str, _user: &str) -> Result<String, TransportError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        Ok(self.0.to_string())
    }
}

struct Down;

impl LlmClient for Down {
    fn complete(&self, _system: &str, _user: &str) -> Result<String, TransportError> {
        Err(TransportError("connection refused".into()))
    }
}

fn app() -> Router {
    router(AppState::new(None, None))
}

async fn call(app: &Router, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
    let (status, text) = call(app, method, uri, body.to_string()).await;
    (status, serde_json::from_str(&text).unwrap())
}

async fn wait_done(app: &Router, id: &str) -> Value {
    for _ in 0..2000 {
        let (status, text) = call(app, Method::GET, &format!("/api/experiments/{id}"), Body::empty()).await;
        assert_eq!(status, StatusCode::OK);
        let v: Value = serde_json::from_str(&text).unwrap();
        match v["status"].as_str().unwrap() {
            "done" | "failed" => return v,
            _ => tokio::time::sleep(Duration::from_millis(10)).await,
        }
    }
    panic!("experiment {id} did not finish");
}

fn synthetic_fixture() -> (String, String) {
    let fx = generate_synthetic(&SyntheticSpec::size_correlated(6, 40, 3)).unwrap();
    (fx.pool.to_canonical_string(), fx.table.to_csv())
}

#[tokio::test(flavor = "multi_thread")]
async fn fixture_upload_is_idempotent_per_name() {
    let app = app();
    let (pool, trace) = synthetic_fixture();
    let (s, v) = call(&app, Method::PUT, "/api/fixtures/p", pool.clone()).await;
    assert_eq!(s, StatusCode::CREATED);
    let v: Value = serde_json::from_str(&v).unwrap();
    assert_eq!(v["kind"], "pool");
    assert_eq!(v["digest"].as_str().unwrap().len(), 64);
    assert_eq!(call(&app, Method::PUT, "/api/fixtures/p", pool).await.0, StatusCode::OK);
    assert_eq!(
        call(&app, Method::PUT, "/api/fixtures/p", trace.clone()).await.0,
        StatusCode::CONFLICT
    );
    let (s, v) = call(&app, Method::PUT, "/api/fixtures/t", trace).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(v.contains("\"trace\""));
    let (s, v) = call(
        &app,
        Method::PUT,
        "/api/fixtures/bad",
        "model_id,sample_id,correct\nm,s,2\n",
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v.contains("error"));
}

#[tokio::test(flavor = "multi_thread")]
async fn reason_offline_uses_keyword_table() {
    let app = app();
    let (s, v) = call_json(
        &app,
        Method::POST,
        "/api/reason",
        json!({"prompt": "drone-based edge detection", "offline": true}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        v["weights"],
        json!({"accuracy": 0.63, "size": 0.25, "complexity": 0.21})
    );
    assert_eq!(v["provenance"], "fallback");
}

#[tokio::test(flavor = "multi_thread")]
async fn reason_rejects_empty_prompt() {
    let (s, v) = call_json(&app(), Method::POST, "/api/reason", json!({"prompt": "  "})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "prompt");
}

#[tokio::test(flavor = "multi_thread")]
async fn reason_averages_client_samples() {
    let client = Arc::new(Constant(
        r#"{"weights": {"accuracy": 0.5, "size": 0.3, "complexity": 0.2}, "justification": "fixed"}"#,
        AtomicUsize::new(0),
    ));
    let app = router(AppState::new(None, Some(client.clone())));
    let (s, v) = call_json(
        &app,
        Method::POST,
        "/api/reason",
        json!({"prompt": "anything", "samples": 7}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["weights"], json!({"accuracy": 0.5, "size": 0.3, "complexity": 0.2}));
    assert_eq!(
        v["per_metric_stddev"],
        json!({"accuracy": 0.0, "size": 0.0, "complexity": 0.0})
    );
    assert_eq!(v["samples_used"], 7);
    assert_eq!(client.1.load(Ordering::SeqCst), 7);

    // Offline never reaches the client.
    let (s, _) = call_json(
        &app,
        Method::POST,
        "/api/reason",
        json!({"prompt": "edge", "offline": true}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(client.1.load(Ordering::SeqCst), 7);
}

#[tokio::test(flavor = "multi_thread")]
async fn reason_failing_client_falls_back_or_502() {
    let state = AppState::new(None, Some(Arc::new(Down))).with_retry(RetryPolicy::immediate(1));
    let app = router(state);
    let (s, v) = call_json(
        &app,
        Method::POST,
        "/api/reason",
        json!({"prompt": "server farm", "samples": 3}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["provenance"], "fallback");
    assert_eq!(v["weights"], json!({"accuracy": 0.8, "size": 0.1, "complexity": 0.1}));
    let (s, v) = call_json(
        &app,
        Method::POST,
        "/api/reason",
        json!({"prompt": "server farm", "samples": 3, "allow_fallback": false}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert!(v["error"].is_string());
}

#[tokio::test(flavor = "multi_thread")]
async fn experiment_validation_names_fields() {
    let app = app();
    let base = json!({
        "strategy": "thompson", "budget": 10, "weights": {"accuracy": 1.0, "size": 0.0, "complexity": 0.0},
        "synthetic_spec": {"accuracies": [0.2, 0.8], "samples": 10, "seed": 1}
    });
    let cases = [
        ("budget", json!(-1)),
        ("weights", json!({"accuracy": 0.0, "size": 0.0, "complexity": 0.0})),
        ("weights", json!("1,2,3")),
        ("strategy", json!("greedy")),
        ("epsilon", json!(1.5)),
        ("repetitions", json!(0)),
    ];
    for (field, value) in cases {
        let mut body = base.clone();
        body[field] = value;
        let (s, v) = call_json(&app, Method::POST, "/api/experiments", body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{field}");
        assert_eq!(v["field"], field, "{v}");
    }
    let mut body = base.clone();
    body.as_object_mut().unwrap().remove("budget");
    assert_eq!(
        call_json(&app, Method::POST, "/api/experiments", body).await.1["field"],
        "budget"
    );

    let (s, _) = call(&app, Method::POST, "/api/experiments", "{not json").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let mut body = base.clone();
    body.as_object_mut().unwrap().remove("synthetic_spec");
    body["pool_ref"] = json!("missing");
    body["trace_ref"] = json!("missing");
    assert_eq!(
        call_json(&app, Method::POST, "/api/experiments", body).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn uncovered_trace_is_rejected() {
    let app = app();
    let (pool, _) = synthetic_fixture();
    call(&app, Method::PUT, "/api/fixtures/p", pool).await;
    call(
        &app,
        Method::PUT,
        "/api/fixtures/t",
        "model_id,sample_id,correct\nmodel_000,s0,1\n",
    )
    .await;
    let (s, v) = call_json(
        &app,
        Method::POST,
        "/api/experiments",
        json!({"strategy": "ucb", "budget": 5, "weights": "1,0,0", "pool_ref": "p", "trace_ref": "t"}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "trace_ref");
}

#[tokio::test(flavor = "multi_thread")]
async fn experiment_lifecycle() {
    let app = app();
    let (s, v) = call_json(
        &app,
        Method::POST,
        "/api/experiments",
        json!({
            "strategy": "thompson", "budget": 3000, "repetitions": 60, "seed": 2,
            "weights": [0.63, 0.25, 0.21],
            "synthetic_spec": {"arms": 40, "samples": 300, "seed": 11}
        }),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = v["id"].as_str().unwrap().to_string();

    let (s, _) = call(
        &app,
        Method::GET,
        &format!("/api/experiments/{id}/report"),
        Body::empty(),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);

    let mut last = 0.0;
    loop {
        let (_, text) = call(&app, Method::GET, &format!("/api/experiments/{id}"), Body::empty()).await;
        let v: Value = serde_json::from_str(&text).unwrap();
        let p = v["progress"].as_f64().unwrap();
        assert!(p >= last && p <= 1.0);
        last = p;
        assert_eq!(v["pulls_expected"], 3000 * 60);
        let wins: u64 = v["leaderboard"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["wins"].as_u64().unwrap())
            .sum();
        assert_eq!(wins, v["repetitions_completed"].as_u64().unwrap());
        if v["status"] == "done" {
            assert_eq!(p, 1.0);
            assert_eq!(v["pulls_completed"], 3000 * 60);
            assert_eq!(v["repetitions_completed"], 60);
            assert_eq!(v["report"]["repetitions"], 60);
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }

    let (s, report) = call(
        &app,
        Method::GET,
        &format!("/api/experiments/{id}/report"),
        Body::empty(),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let fx = generate_synthetic(&SyntheticSpec::size_correlated(40, 300, 11)).unwrap();
    let config = ExperimentConfig {
        strategy: Strategy::Thompson,
        budget: 3000,
        epsilon: 0.1,
        seed: 2,
        weights: MetricWeights {
            accuracy: 0.63,
            size: 0.25,
            complexity: 0.21,
        },
        repetitions: 60,
    };
    let local = run_aggregate(&config, &fx.pool, &fx.backend, &fx.dataset, &Silent).unwrap();
    assert_eq!(report, local.to_canonical_string());

    assert_eq!(
        call(&app, Method::DELETE, &format!("/api/experiments/{id}"), Body::empty())
            .await
            .0,
        StatusCode::NOT_IMPLEMENTED
    );
    assert_eq!(
        call(&app, Method::GET, "/api/experiments/nope", Body::empty()).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        call(&app, Method::GET, "/api/experiments/nope/report", Body::empty())
            .await
            .0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_experiments_match_solo_runs() {
    let app = app();
    let (pool, trace) = synthetic_fixture();
    call(&app, Method::PUT, "/api/fixtures/p", pool).await;
    call(&app, Method::PUT, "/api/fixtures/t", trace).await;
    let bodies = [
        json!({"strategy": "ucb", "budget": 100, "repetitions": 20, "seed": 1, "weights": "0.63,0.25,0.21", "pool_ref": "p", "trace_ref": "t"}),
        json!({"strategy": "epsilon_greedy", "epsilon": 0.3, "budget": 80, "repetitions": 20, "seed": 9, "weights": "1,0,0", "pool_ref": "p", "trace_ref": "t"}),
    ];
    let mut ids = Vec::new();
    for b in &bodies {
        let (s, v) = call_json(&app, Method::POST, "/api/experiments", b.clone()).await;
        assert_eq!(s, StatusCode::ACCEPTED);
        ids.push(v["id"].as_str().unwrap().to_string());
    }
    let mut concurrent = Vec::new();
    for id in &ids {
        assert_eq!(wait_done(&app, id).await["status"], "done");
        concurrent.push(
            call(
                &app,
                Method::GET,
                &format!("/api/experiments/{id}/report"),
                Body::empty(),
            )
            .await
            .1,
        );
    }
    for (b, expected) in bodies.iter().zip(&concurrent) {
        let solo = app_clone_run(&app, b.clone()).await;
        assert_eq!(&solo, expected);
    }
}

async fn app_clone_run(app: &Router, body: Value) -> String {
    let (_, v) = call_json(app, Method::POST, "/api/experiments", body).await;
    let id = v["id"].as_str().unwrap().to_string();
    wait_done(app, &id).await;
    call(
        app,
        Method::GET,
        &format!("/api/experiments/{id}/report"),
        Body::empty(),
    )
    .await
    .1
}

#[tokio::test(flavor = "multi_thread")]
async fn reports_are_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(Some(dir.path().to_path_buf()), None));
    let (_, v) = call_json(
        &app,
        Method::POST,
        "/api/experiments",
        json!({"strategy": "thompson", "budget": 50, "weights": "1,0,0",
               "synthetic_spec": {"accuracies": [0.3, 0.6], "samples": 30, "seed": 5}}),
    )
    .await;
    let id = v["id"].as_str().unwrap().to_string();
    wait_done(&app, &id).await;
    let (_, report) = call(
        &app,
        Method::GET,
        &format!("/api/experiments/{id}/report"),
        Body::empty(),
    )
    .await;
    let saved = std::fs::read_to_string(dir.path().join(format!("{id}.json"))).unwrap();
    assert_eq!(saved, report);

    let (s, v) = call_json(
        &app,
        Method::POST,
        "/api/experiments",
        json!({"strategy": "thompson", "budget": 50, "weights": "1,0,0",
               "synthetic_spec": {"accuracies": [1.5], "samples": 30}}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "synthetic_spec");
}
