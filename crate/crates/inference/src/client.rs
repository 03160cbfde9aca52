use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use resistkit_core::prompting::Prompt;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{BackendConfig, InferenceError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn model(&self) -> &str;

    async fn complete(&self, prompt: &Prompt) -> Result<Completion, InferenceError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub sample_id: String,
    pub fingerprint: String,
    /// Completion body exactly as returned.
    pub text: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

/// sha256 over model and both prompt messages.
pub fn fingerprint(model: &str, prompt: &Prompt) -> String {
    let mut h = Sha256::new();
    for part in [model, &prompt.system, &prompt.user] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

pub async fn classify(
    backend: &dyn ChatBackend,
    sample_id: &str,
    prompt: &Prompt,
) -> Result<RawCompletion, InferenceError> {
    let start = Instant::now();
    let c = backend.complete(prompt).await?;
    Ok(RawCompletion {
        sample_id: sample_id.to_string(),
        fingerprint: fingerprint(backend.model(), prompt),
        text: c.text,
        latency_ms: start.elapsed().as_millis() as u64,
        attempts: c.attempts,
    })
}

enum AttemptError {
    Retryable(String),
    Fatal { status: u16, body: String },
}

/// Client for the common chat-completion wire format, decoding
/// deterministically (temperature 0, top-p 1).
pub struct HttpChatClient {
    config: BackendConfig,
    api_key: Option<String>,
    http: reqwest::Client,
}

impl HttpChatClient {
    pub fn new(config: BackendConfig) -> Result<Self, InferenceError> {
        config.validate()?;
        let api_key = config.api_key()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| InferenceError::InvalidConfig(e.to_string()))?;
        Ok(HttpChatClient { config, api_key, http })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(retry as i32);
        let jitter = rand::thread_rng().gen_range(0.8..=1.2);
        Duration::from_millis((base * jitter) as u64)
    }

    async fn attempt(&self, prompt: &Prompt) -> Result<String, AttemptError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": 0,
            "top_p": 1.0,
            "max_tokens": self.config.max_tokens,
        });
        let mut req = self.http.post(self.config.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal { status: status.as_u16(), body: text });
        }
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal { status: status.as_u16(), body: format!("unreadable body ({e}): {text}") })?;
        match v.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
            Some(content) => Ok(content.to_string()),
            None => Err(AttemptError::Fatal { status: status.as_u16(), body: format!("no completion content: {text}") }),
        }
    }
}

#[async_trait]
impl ChatBackend for HttpChatClient {
    fn model(&self) -> &str {
        &self.config.model
    }

    async fn complete(&self, prompt: &Prompt) -> Result<Completion, InferenceError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(prompt).await {
                Ok(text) => return Ok(Completion { text, attempts }),
                Err(AttemptError::Fatal { status, body }) => {
                    return Err(InferenceError::BackendRejection { status, body })
                }
                Err(AttemptError::Retryable(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(InferenceError::Transport { attempts, message });
                    }
                    tracing::debug!(attempts, %message, "retrying chat completion");
                    tokio::time::sleep(self.backoff(attempts - 1)).await;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_covers_model_and_messages() {
        let p = Prompt { system: "s".into(), user: "u".into() };
        let a = fingerprint("m", &p);
        assert_eq!(a.len(), 64);
        assert_eq!(a, fingerprint("m", &p));
        assert_ne!(a, fingerprint("m2", &p));
        assert_ne!(a, fingerprint("m", &Prompt { system: "su".into(), user: "".into() }));
    }

    #[test]
    fn backoff_schedule() {
        let c = HttpChatClient::new(BackendConfig::default()).unwrap();
        for retry in 0..4 {
            let d = c.backoff(retry).as_millis() as f64;
            let nominal = 500.0 * 2f64.powi(retry as i32);
            assert!(d >= nominal * 0.8 - 1.0 && d <= nominal * 1.2, "{retry}: {d}");
        }
    }
}
