use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use uxsim_core::llm::{
    CompletionRequest, EmbeddingSource, Expect, Gateway, GatewayMode, LlmConfig, LlmError,
    OpenAiProvider, StubScript,
};

/// Fake chat endpoint. Fails the first `fail_first` requests with 503,
/// then echoes the last user message.
#[derive(Default)]
struct Fake {
    fail_first: u32,
    hits: AtomicU32,
}

async fn chat(State(fake): State<Arc<Fake>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = fake.hits.fetch_add(1, Ordering::SeqCst);
    if n < fake.fail_first {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "overloaded"})));
    }
    let last = body["messages"].as_array().and_then(|m| m.last()).cloned().unwrap_or_default();
    let content = format!("echo: {}", last["content"].as_str().unwrap_or(""));
    (
        StatusCode::OK,
        Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]})),
    )
}

async fn embeddings(State(fake): State<Arc<Fake>>) -> Json<Value> {
    fake.hits.fetch_add(1, Ordering::SeqCst);
    Json(json!({"data": [{"embedding": [0.6, 0.8, 0.0]}]}))
}

async fn spawn_fake(fail_first: u32) -> (String, Arc<Fake>) {
    let fake = Arc::new(Fake {
        fail_first,
        ..Default::default()
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .with_state(fake.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), fake)
}

fn config(endpoint: &str) -> LlmConfig {
    LlmConfig {
        endpoint: endpoint.into(),
        model: Some("test-model".into()),
        api_key_env: "UXSIM_TEST_NO_SUCH_KEY".into(),
        retries: 3,
        backoff_ms: 1,
        ..LlmConfig::default()
    }
}

fn live(cfg: &LlmConfig) -> Gateway {
    Gateway::live(Arc::new(OpenAiProvider::from_config(cfg).unwrap()), cfg)
}

fn req(text: &str) -> CompletionRequest {
    CompletionRequest::new("plan", "system text", text, Expect::FreeText)
}

#[tokio::test]
async fn stub_replies_in_order() {
    let gw = Gateway::stub(StubScript::from_json(r#"{"queues": {"plan": ["A", "B"]}}"#).unwrap());
    assert_eq!(gw.mode(), GatewayMode::Stub);
    assert_eq!(gw.complete(req("x")).await.unwrap(), "A");
    assert_eq!(gw.complete(req("x")).await.unwrap(), "B");
    assert!(matches!(gw.complete(req("x")).await, Err(LlmError::StubExhausted(_))));
    assert_eq!(gw.captures().len(), 3);
    assert_eq!(gw.provider_calls(), 0);
}

#[tokio::test]
async fn forks_replay_the_script_from_the_start() {
    let gw = Gateway::stub(
        StubScript::from_json(
            r#"{"queues": {"plan": ["A"]}, "personas": {"Ava": {"queues": {"plan": ["ava"]}}}}"#,
        )
        .unwrap(),
    );
    let a = gw.fork(None);
    let b = gw.fork(Some("Ava"));
    assert_eq!(a.complete(req("x")).await.unwrap(), "A");
    assert_eq!(b.complete(req("x")).await.unwrap(), "ava");
    assert_eq!(gw.complete(req("x")).await.unwrap(), "A");
    assert_eq!(a.captures().len(), 1);
}

#[tokio::test]
async fn live_mode_calls_the_provider() {
    let (endpoint, fake) = spawn_fake(0).await;
    let gw = live(&config(&endpoint));
    assert_eq!(gw.complete(req("hello")).await.unwrap(), "echo: hello");
    assert_eq!(fake.hits.load(Ordering::SeqCst), 1);
    assert_eq!(gw.provider_calls(), 1);
}

#[tokio::test]
async fn transient_failures_are_retried() {
    let (endpoint, fake) = spawn_fake(2).await;
    let gw = live(&config(&endpoint));
    assert_eq!(gw.complete(req("hi")).await.unwrap(), "echo: hi");
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn failure_on_every_attempt_surfaces_after_r_retries() {
    let (endpoint, fake) = spawn_fake(u32::MAX).await;
    let cfg = config(&endpoint);
    let gw = live(&cfg);
    let err = gw.complete(req("hi")).await.unwrap_err();
    assert_eq!(err, LlmError::Provider { status: 503, message: r#"{"error":"overloaded"}"#.into() });
    assert_eq!(fake.hits.load(Ordering::SeqCst), cfg.retries + 1);
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let cfg = config(&format!("http://{addr}/v1"));
    let gw = live(&cfg);
    match gw.complete(req("hi")).await.unwrap_err() {
        LlmError::Transport { attempts, .. } => assert_eq!(attempts, cfg.retries + 1),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(gw.provider_calls(), u64::from(cfg.retries + 1));
}

#[tokio::test]
async fn record_then_replay_makes_no_network_calls() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcript.jsonl");
    let (endpoint, fake) = spawn_fake(0).await;
    let mut cfg = config(&endpoint);
    cfg.embeddings = EmbeddingSource::Provider;
    cfg.embedding_model = Some("test-embed".into());

    let provider = Arc::new(OpenAiProvider::from_config(&cfg).unwrap());
    let rec = Gateway::record(provider, &cfg, &path).unwrap();
    let first = rec.complete(req("one")).await.unwrap();
    let second = rec.complete(req("two")).await.unwrap();
    let v = rec.embed("jacket").await.unwrap();
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);

    let rep = Gateway::replay(&cfg, &path).unwrap();
    assert_eq!(rep.complete(req("two")).await.unwrap(), second);
    assert_eq!(rep.complete(req("one")).await.unwrap(), first);
    assert_eq!(rep.embed("jacket").await.unwrap(), v);
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);
    assert_eq!(rep.provider_calls(), 0);

    match rep.complete(req("never recorded")).await.unwrap_err() {
        LlmError::ReplayMiss { digest, purpose } => {
            assert_eq!(digest, req("never recorded").digest());
            assert_eq!(purpose, "plan");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(rep.embed("flight").await, Err(LlmError::ReplayMiss { .. })));
}

#[tokio::test]
async fn hash_embeddings_never_touch_the_provider() {
    let (endpoint, fake) = spawn_fake(0).await;
    let gw = live(&config(&endpoint));
    let a = gw.embed("jacket").await.unwrap();
    assert_eq!(a, gw.embed("jacket").await.unwrap());
    assert_eq!(a.len(), uxsim_core::llm::HASH_DIM);
    assert_eq!(fake.hits.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn rate_limit_spaces_live_calls() {
    let (endpoint, _fake) = spawn_fake(0).await;
    let mut cfg = config(&endpoint);
    cfg.requests_per_second = Some(20.0);
    let gw = live(&cfg);
    let start = std::time::Instant::now();
    for i in 0..5 {
        gw.complete(req(&format!("r{i}"))).await.unwrap();
    }
    // Burst of one, then one every 50 ms.
    assert!(start.elapsed() >= std::time::Duration::from_millis(190), "{:?}", start.elapsed());
}
