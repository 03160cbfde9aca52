//! Chat-completion inference for the resistance classifiers: an HTTP client
//! with retry and backoff, the two-line reply parser, and resumable batch runs
//! over an append-only run file.

mod batch;
mod client;
mod config;
pub mod mock;
mod parse;

pub use batch::{
    answered_ids, read_run_file, run_batch, BatchItem, BatchOutcome, ErrorRecord, Manifest, RunChecksum, RunMeta,
    RunPaths,
};
pub use client::{classify, fingerprint, ChatBackend, Completion, HttpChatClient, RawCompletion};
pub use config::BackendConfig;
pub use parse::{parse_completion, parse_reply, Prediction};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend rejected the request with status {status}: {body}")]
    BackendRejection { status: u16, body: String },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("run is corrupt: {0}")]
    RunCorrupt(String),
    #[error("invalid batch input: {0}")]
    InvalidInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl InferenceError {
    /// Whether a caller could reasonably try again later.
    pub fn is_retryable(&self) -> bool {
        matches!(self, InferenceError::Transport { .. })
    }
}
