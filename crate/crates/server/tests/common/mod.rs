#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use resistkit_inference::mock::EchoGoldBackend;
use resistkit_inference::ChatBackend;
use resistkit_server::{AppState, Classifier, ScenarioBank, Study};
use serde_json::Value;

pub struct Server {
    pub base: String,
    pub study: Arc<Study>,
    pub handle: tokio::task::JoinHandle<()>,
    pub http: reqwest::Client,
}

pub fn bank() -> Arc<ScenarioBank> {
    Arc::new(ScenarioBank::synthetic())
}

/// Answers every scenario with its gold label and rationale.
pub fn echo_bank(bank: &ScenarioBank) -> Arc<dyn ChatBackend> {
    Arc::new(EchoGoldBackend::new(
        bank.scenarios().iter().map(|s| (s.response.clone(), s.gold, s.rationale.clone())),
    ))
}

pub async fn start(dir: &Path, backend: Arc<dyn ChatBackend>, admin_token: Option<&str>) -> Server {
    let study = Arc::new(Study::open("study", &dir.join("study.events.jsonl"), bank(), 42).unwrap());
    let state = AppState {
        classifier: Arc::new(Classifier::new("mock", backend, 4)),
        study: study.clone(),
        admin_token: admin_token.map(str::to_string),
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let handle = tokio::spawn(async move {
        axum::serve(listener, resistkit_server::router(state)).await.unwrap();
    });
    Server { base: format!("http://{addr}"), study, handle, http: reqwest::Client::new() }
}

impl Server {
    pub async fn post(&self, path: &str, token: Option<&str>, body: &Value) -> (u16, Value) {
        let mut req = self.http.post(format!("{}{path}", self.base)).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (u16, Value) {
        let mut req = self.http.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn register(&self, group: Option<&str>) -> (String, String, String) {
        let body = match group {
            Some(g) => serde_json::json!({"group": g}),
            None => serde_json::json!({}),
        };
        let (status, v) = self.post("/v1/study/participants", None, &body).await;
        assert_eq!(status, 200, "{v}");
        (
            v["participant_id"].as_str().unwrap().to_string(),
            v["group"].as_str().unwrap().to_string(),
            v["token"].as_str().unwrap().to_string(),
        )
    }

    pub async fn next(&self, pid: &str, token: &str) -> Value {
        let (status, v) = self.get(&format!("/v1/study/scenarios/next?participant={pid}"), Some(token)).await;
        assert_eq!(status, 200, "{v}");
        v
    }

    /// Answers whatever the server asks for next until the current phase is
    /// complete. Returns every ack.
    pub async fn finish_phase(&self, pid: &str, token: &str) -> Vec<Value> {
        let mut acks = Vec::new();
        let phase = self.next(pid, token).await["phase"].as_str().unwrap_or("post").to_string();
        loop {
            let (status, next) = self.get(&format!("/v1/study/scenarios/next?participant={pid}&phase={phase}"), Some(token)).await;
            assert_eq!(status, 200, "{next}");
            if next["status"] == "phase_complete" {
                return acks;
            }
            let body = serde_json::json!({
                "participant_id": pid,
                "phase": next["phase"],
                "scenario_id": next["scenario"]["scenario_id"],
                "kind": next["step"],
                "text": format!("{} answer to {}", next["step"], next["scenario"]["scenario_id"]),
            });
            let (status, ack) = self.post("/v1/study/responses", Some(token), &body).await;
            assert_eq!(status, 200, "{ack}");
            acks.push(ack);
        }
    }
}
