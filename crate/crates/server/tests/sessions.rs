mod common;

use std::sync::Arc;

use resistkit_core::corpus::{synthetic, Session};
use resistkit_inference::mock::FixedReplyBackend;
use resistkit_inference::{classify, BackendConfig, HttpChatClient};
use serde_json::{json, Value};

fn predictions_from_gold(sessions: &[Session], annotations: &[resistkit_core::corpus::AnnotationRecord]) -> Vec<Value> {
    let mut by_id = std::collections::BTreeMap::new();
    for a in annotations {
        by_id.entry(a.sample_id.clone()).or_insert(a.label);
    }
    sessions
        .iter()
        .flat_map(|s| s.client_utterances().map(move |u| format!("{}:{}", s.session_id, u.index)))
        .map(|id| json!({"sample_id": id, "label": by_id[&id].name()}))
        .collect()
}

#[tokio::test]
async fn analyze_returns_profiles_prevalence_and_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let srv = common::start(dir.path(), common::echo_bank(&common::bank()), None).await;
    let (sessions, annotations) = synthetic::generate(6, 8, 3);
    let preds = predictions_from_gold(&sessions, &annotations);
    let (status, v) = srv.post("/v1/sessions/analyze", None, &json!({"sessions": sessions, "predictions": preds})).await;
    assert_eq!(status, 200, "{v}");
    let profiles = v["profiles"].as_array().unwrap();
    assert_eq!(profiles.len(), 6);
    for p in profiles {
        assert_eq!(p["client_utterances"], 8);
        let counted: u64 = p["per_label_count"].as_object().unwrap().values().map(|c| c.as_u64().unwrap()).sum();
        assert_eq!(counted, p["resistant_count"].as_u64().unwrap());
    }
    assert_eq!(v["prevalence"]["sessions"], 6);
    assert_eq!(v["correlations"]["rows"].as_array().unwrap().len(), 14);
    assert_eq!(v["unpredicted"], json!([]));

    let mut partial = preds.clone();
    partial.pop();
    partial.push(json!({"sample_id": "s000:1", "label": "Invalid"}));
    partial.remove(0);
    let (status, v) = srv.post("/v1/sessions/analyze", None, &json!({"sessions": sessions, "predictions": partial})).await;
    assert_eq!(status, 200, "{v}");
    assert_eq!(v["unpredicted"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn analyze_rejects_bad_input_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let srv = common::start(dir.path(), common::echo_bank(&common::bank()), None).await;
    let (sessions, annotations) = synthetic::generate(2, 3, 5);
    let preds = predictions_from_gold(&sessions, &annotations);

    let mut bad = preds.clone();
    bad[2]["label"] = json!("Grumbling");
    let (status, v) = srv.post("/v1/sessions/analyze", None, &json!({"sessions": sessions, "predictions": bad})).await;
    assert_eq!((status, v["field_path"].clone()), (400, json!("predictions[2].label")));

    let mut bad = preds.clone();
    bad[1]["sample_id"] = json!("s000:0");
    let (status, v) = srv.post("/v1/sessions/analyze", None, &json!({"sessions": sessions, "predictions": bad})).await;
    assert_eq!((status, v["field_path"].clone()), (400, json!("predictions[1].sample_id")));

    let mut dup = sessions.clone();
    dup.push(sessions[0].clone());
    let (status, v) = srv.post("/v1/sessions/analyze", None, &json!({"sessions": dup, "predictions": preds})).await;
    assert_eq!((status, v["field_path"].clone()), (400, json!("sessions[2].session_id")));

    let (status, v) = srv.post("/v1/sessions/analyze", None, &json!({"sessions": [], "predictions": []})).await;
    assert_eq!((status, v["field_path"].clone()), (400, json!("sessions")));
}

#[tokio::test]
async fn mock_llm_speaks_the_chat_completions_protocol() {
    let app = resistkit_server::mock_llm::router(Arc::new(FixedReplyBackend::new("Behavior: Cooperation\nReason: aligned")));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    let client = HttpChatClient::new(BackendConfig {
        base_url: format!("http://{addr}/v1"),
        model: "m".into(),
        ..Default::default()
    })
    .unwrap();
    let prompt = resistkit_core::prompting::Prompt { system: "s".into(), user: "u".into() };
    let raw = classify(&client, "x:1", &prompt).await.unwrap();
    assert_eq!(raw.text, "Behavior: Cooperation\nReason: aligned");
}
