use std::sync::{Arc, OnceLock};
use std::time::Duration;

use autoquery::classifier::{train, ClassifierModel, TrainConfig};
use autoquery::desk::load_desk_dataset;
use autoquery::embed::EmbedderConfig;
use autoquery::extract::{BackendError, ChatBackend, FailingBackend, InferenceSettings, MockBackend};
use autoquery::pipeline::Router;
use autoquery::prompts::PromptPool;
use autoquery::registry::Registry;
use autoquery_cli::service::{serve, ServiceState};
use serde_json::{json, Value};

fn model() -> Arc<ClassifierModel> {
    static M: OnceLock<Arc<ClassifierModel>> = OnceLock::new();
    M.get_or_init(|| {
        let ex: Vec<_> = load_desk_dataset().unwrap().train.iter().map(|s| s.labeled()).collect();
        Arc::new(train(&ex, &TrainConfig::default(), EmbedderConfig::default()).unwrap())
    })
    .clone()
}

fn router(backend: Arc<dyn ChatBackend>) -> Router {
    let registry = Registry::default();
    Router {
        model: model(),
        pool: Arc::new(PromptPool::bundled(&registry).unwrap()),
        registry: Arc::new(registry),
        backend,
        settings: InferenceSettings::default(),
    }
}

fn mock_router() -> Router {
    router(Arc::new(MockBackend::new(Registry::default()).with_classifier(model())))
}

/// Starts a server; returns its base URL and state.
async fn start(parallelism: usize) -> (String, Arc<ServiceState>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let state = ServiceState::new(parallelism);
    tokio::spawn(serve(listener, state.clone(), std::future::pending()));
    (base, state)
}

async fn post(base: &str, path: &str, body: &str) -> (u16, Value) {
    let resp = reqwest::Client::new()
        .post(format!("{base}{path}"))
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("_timings");
    v
}

#[tokio::test(flavor = "multi_thread")]
async fn healthz_turns_ready_after_install() {
    let (base, state) = start(4).await;
    let get = || async { reqwest::get(format!("{base}/healthz")).await.unwrap().status().as_u16() };
    assert_eq!(get().await, 503);
    let (status, _) = post(&base, "/v1/route", r#"{"query": "hi"}"#).await;
    assert_eq!(status, 503);
    assert!(state.install(mock_router()));
    assert!(!state.install(mock_router()));
    assert_eq!(get().await, 200);
}

#[tokio::test(flavor = "multi_thread")]
async fn request_validation() {
    let (base, state) = start(4).await;
    state.install(mock_router());
    assert_eq!(post(&base, "/v1/route", "{}").await.0, 400);
    assert_eq!(post(&base, "/v1/route", r#"{"query": ""}"#).await.0, 400);
    assert_eq!(post(&base, "/v1/route", "{not json").await.0, 422);
    assert_eq!(post(&base, "/v1/classify", "[1, 2]").await.0, 422);
    let big = json!({"query": "x".repeat(4097)}).to_string();
    let (status, body) = post(&base, "/v1/route", &big).await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["kind"], "invalid_query");
}

#[tokio::test(flavor = "multi_thread")]
async fn routes_and_classifies() {
    let (base, state) = start(4).await;
    state.install(mock_router());
    let nhtsa = "Are there any recalls or customer complaints related to the airbag failure in a 2018 Jeep Grand Cherokee?";
    let (status, body) = post(&base, "/v1/route", &json!({"query": nhtsa}).to_string()).await;
    assert_eq!(status, 200);
    assert_eq!(body["tool_category"], "nhtsa");
    assert_eq!(body["entities"]["make"], "Jeep");
    assert!(body["_timings"]["total_seconds"].is_number());

    let q = "What are the negative aspects of choosing an aftermarket brake pad over an OEM part?";
    let (status, body) = post(&base, "/v1/classify", &json!({"query": q}).to_string()).await;
    assert_eq!(status, 200);
    assert_eq!(body["tool_category"], "others");
    let probs = body["probabilities"].as_object().unwrap();
    assert_eq!(probs.len(), 8);
    let total: f64 = probs.values().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let (status, body) = post(&base, "/v1/route", &json!({"query": q, "mode": "single_step"}).to_string()).await;
    assert_eq!((status, body["entities"].clone()), (200, json!({})));
}

#[tokio::test(flavor = "multi_thread")]
async fn backend_failure_is_502_with_tool() {
    let (base, state) = start(4).await;
    state.install(router(Arc::new(FailingBackend::new(BackendError::timeout(Duration::from_millis(5))))));
    let q = json!({"query": "Replace brake pads for my Toyota Corolla 2015."}).to_string();
    let (status, body) = post(&base, "/v1/route", &q).await;
    assert_eq!(status, 502);
    assert_eq!(body["tool_category"], "repair_to_parts");
    assert_eq!(body["entities"], json!({}));
    assert_eq!(body["error"]["kind"], "backend");
    assert_eq!(body["error"]["retryable"], true);

    let (status, body) = post(&base, "/v1/route", &json!({"query": "x y", "mode": "single_step"}).to_string()).await;
    assert_eq!(status, 502);
    assert_eq!(body["error"]["kind"], "backend");
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_equals_serial() {
    let (base, state) = start(8).await;
    let r = mock_router();
    state.install(r.clone());
    let ds = load_desk_dataset().unwrap();
    let queries: Vec<String> = ds.probe_queries().into_iter().take(32).collect();

    let mut serial = Vec::new();
    for q in &queries {
        let (status, body) = post(&base, "/v1/route", &json!({"query": q}).to_string()).await;
        assert_eq!(status, 200, "{q}");
        serial.push(without_timings(body));
    }
    let tasks: Vec<_> = queries
        .iter()
        .map(|q| {
            let (base, body) = (base.clone(), json!({"query": q}).to_string());
            tokio::spawn(async move { post(&base, "/v1/route", &body).await })
        })
        .collect();
    for (i, t) in tasks.into_iter().enumerate() {
        let (status, body) = t.await.unwrap();
        assert_eq!(status, 200);
        assert_eq!(without_timings(body), serial[i]);
    }

    // the library call gives the same JSON as the service
    for (q, s) in queries.iter().zip(&serial) {
        let direct = tokio::task::block_in_place(|| r.two_step(q).unwrap().public_json(false));
        assert_eq!(&direct, s);
    }
}
