use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use resistkit_core::prompting::Prompt;
use resistkit_inference::{classify, BackendConfig, ChatBackend, HttpChatClient, InferenceError};
use serde_json::{json, Value};

#[derive(Clone)]
struct Endpoint {
    /// Status codes to answer with before succeeding.
    failures: Arc<Vec<u16>>,
    hits: Arc<AtomicUsize>,
    reply: &'static str,
    seen: Arc<Mutex<Vec<(Value, Option<String>)>>>,
}

async fn chat(State(ep): State<Endpoint>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = ep.hits.fetch_add(1, Ordering::SeqCst);
    let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_string());
    ep.seen.lock().unwrap().push((body, auth));
    if let Some(&code) = ep.failures.get(n) {
        return (StatusCode::from_u16(code).unwrap(), Json(json!({"error": "scripted"})));
    }
    (
        StatusCode::OK,
        Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": ep.reply}}]})),
    )
}

async fn serve(failures: Vec<u16>, reply: &'static str) -> (SocketAddr, Endpoint) {
    let ep = Endpoint {
        failures: Arc::new(failures),
        hits: Arc::new(AtomicUsize::new(0)),
        reply,
        seen: Arc::new(Mutex::new(Vec::new())),
    };
    let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(ep.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, ep)
}

fn config(addr: SocketAddr, retries: u32) -> BackendConfig {
    BackendConfig {
        base_url: format!("http://{addr}/v1"),
        model: "test-model".into(),
        max_retries: retries,
        backoff_base_ms: 1,
        timeout_secs: 5,
        ..Default::default()
    }
}

fn prompt() -> Prompt {
    Prompt { system: "role".into(), user: "dialogue".into() }
}

#[tokio::test]
async fn passes_completion_through_verbatim() {
    let (addr, ep) = serve(vec![], "Behavior: Cooperation\nReason: aligned").await;
    let client = HttpChatClient::new(config(addr, 0)).unwrap();
    let raw = classify(&client, "s:1", &prompt()).await.unwrap();
    assert_eq!(raw.text, "Behavior: Cooperation\nReason: aligned");
    assert_eq!(raw.attempts, 1);
    assert_eq!(raw.sample_id, "s:1");
    let seen = ep.seen.lock().unwrap();
    let body = &seen[0].0;
    assert_eq!(body["temperature"], json!(0));
    assert_eq!(body["top_p"], json!(1.0));
    assert_eq!(body["max_tokens"], json!(512));
    assert_eq!(body["model"], json!("test-model"));
    assert_eq!(body["messages"][0]["role"], json!("system"));
    assert_eq!(body["messages"][1]["content"], json!("dialogue"));
    assert_eq!(seen[0].1, None);
}

#[tokio::test]
async fn retries_until_success() {
    let (addr, ep) = serve(vec![500, 429], "Behavior: Resistance").await;
    let client = HttpChatClient::new(config(addr, 3)).unwrap();
    let c = client.complete(&prompt()).await.unwrap();
    assert_eq!(c.attempts, 3);
    assert_eq!(ep.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn exhausted_retries_are_a_transport_error() {
    let (addr, ep) = serve(vec![500; 10], "unused").await;
    let client = HttpChatClient::new(config(addr, 2)).unwrap();
    let err = client.complete(&prompt()).await.unwrap_err();
    assert!(matches!(err, InferenceError::Transport { attempts: 3, .. }), "{err}");
    assert!(err.is_retryable());
    assert_eq!(ep.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (addr, ep) = serve(vec![400, 400], "unused").await;
    let client = HttpChatClient::new(config(addr, 5)).unwrap();
    let err = client.complete(&prompt()).await.unwrap_err();
    assert!(matches!(err, InferenceError::BackendRejection { status: 400, .. }), "{err}");
    assert_eq!(ep.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unreachable_endpoint_retries_then_fails() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let client = HttpChatClient::new(config(addr, 1)).unwrap();
    let err = client.complete(&prompt()).await.unwrap_err();
    assert!(matches!(err, InferenceError::Transport { attempts: 2, .. }), "{err}");
}

#[tokio::test]
async fn credential_is_sent_from_the_named_variable() {
    let (addr, ep) = serve(vec![], "Behavior: Resistance").await;
    std::env::set_var("RESISTKIT_HTTP_TEST_KEY", "sk-test-123");
    let cfg = BackendConfig { api_key_env: Some("RESISTKIT_HTTP_TEST_KEY".into()), ..config(addr, 0) };
    let client = HttpChatClient::new(cfg).unwrap();
    client.complete(&prompt()).await.unwrap();
    assert_eq!(ep.seen.lock().unwrap()[0].1.as_deref(), Some("Bearer sk-test-123"));
}
