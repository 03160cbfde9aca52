use serde::{Deserialize, Serialize};

use crate::InferenceError;

/// Where and how to reach a chat-completion endpoint. The credential itself
/// never appears here, only the name of the variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub parallelism: usize,
    pub max_tokens: u32,
    pub backoff_base_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_secs: 60,
            max_retries: 3,
            parallelism: 4,
            max_tokens: 512,
            backoff_base_ms: 500,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.parallelism < 1 {
            return Err(InferenceError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(InferenceError::InvalidConfig("timeout_secs must be positive".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(InferenceError::InvalidConfig("base_url is empty".into()));
        }
        Ok(())
    }

    /// Reads the credential from its environment variable, if one is named.
    pub fn api_key(&self) -> Result<Option<String>, InferenceError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| InferenceError::MissingCredential(var.clone())),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}
