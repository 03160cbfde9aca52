//! A chat-completions endpoint backed by any `ChatBackend`, for exercising
//! the HTTP client and the batch pipeline without a real model.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use resistkit_core::prompting::Prompt;
use resistkit_inference::{ChatBackend, InferenceError};
use serde_json::{json, Value};

pub fn router(backend: Arc<dyn ChatBackend>) -> Router {
    Router::new().route("/v1/chat/completions", post(chat)).with_state(backend)
}

fn message(body: &Value, role: &str) -> String {
    body["messages"]
        .as_array()
        .into_iter()
        .flatten()
        .filter(|m| m["role"] == role)
        .filter_map(|m| m["content"].as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

async fn chat(State(backend): State<Arc<dyn ChatBackend>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let prompt = Prompt { system: message(&body, "system"), user: message(&body, "user") };
    match backend.complete(&prompt).await {
        Ok(c) => (
            StatusCode::OK,
            Json(json!({
                "object": "chat.completion",
                "model": backend.model(),
                "choices": [{"index": 0, "finish_reason": "stop", "message": {"role": "assistant", "content": c.text}}],
            })),
        ),
        Err(InferenceError::BackendRejection { status, body }) => (
            StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_REQUEST),
            Json(json!({"error": {"message": body}})),
        ),
        Err(e) => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": {"message": e.to_string()}}))),
    }
}
