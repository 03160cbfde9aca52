//! In-process backends for tests, demos and offline pipeline checks.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use resistkit_core::prompting::{permitted_label_strings, render_reply, Prompt, PromptTemplates};
use resistkit_core::taxonomy::{Label, Task};
use sha2::{Digest, Sha256};

use crate::{ChatBackend, Completion, InferenceError};

/// Reads the task off the output-format block of a built prompt.
pub fn detect_task(prompt: &Prompt) -> Task {
    let binary_choice = format!("\"{}\"", permitted_label_strings(Task::Binary)[1]);
    if prompt.user.contains(&binary_choice) {
        Task::Binary
    } else {
        Task::Fine
    }
}

/// The target response of a built prompt: the last response line.
pub fn target_response(prompt: &Prompt, templates: &PromptTemplates) -> Option<String> {
    prompt
        .user
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix(templates.response_label.as_str()))
        .map(|s| s.trim().to_string())
}

fn stable_hash(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Answers with the gold label of the sample whose response text appears in
/// the prompt, in the reply format the prompt asks for.
pub struct EchoGoldBackend {
    model: String,
    gold: HashMap<String, (Label, String)>,
    templates: PromptTemplates,
    max_delay_ms: u64,
    calls: AtomicUsize,
}

impl EchoGoldBackend {
    /// `entries` maps response text to (gold label, rationale).
    pub fn new(entries: impl IntoIterator<Item = (String, Label, String)>) -> Self {
        EchoGoldBackend {
            model: "mock-echo-gold".into(),
            gold: entries.into_iter().map(|(r, l, why)| (r.trim().to_string(), (l, why))).collect(),
            templates: PromptTemplates::english(),
            max_delay_ms: 0,
            calls: AtomicUsize::new(0),
        }
    }

    /// Sleeps a prompt-dependent 0..=`ms` before answering, which scrambles
    /// completion order under parallel load.
    pub fn with_delay(mut self, ms: u64) -> Self {
        self.max_delay_ms = ms;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reply_for(&self, prompt: &Prompt) -> String {
        let Some((label, why)) = target_response(prompt, &self.templates).and_then(|r| self.gold.get(&r).cloned()) else {
            return "No matching sample.".into();
        };
        let label = match detect_task(prompt) {
            Task::Binary => label.to_binary(),
            Task::Fine => label,
        };
        render_reply(label, &why, &self.templates)
    }
}

#[async_trait]
impl ChatBackend for EchoGoldBackend {
    fn model(&self) -> &str {
        &self.model
    }

    async fn complete(&self, prompt: &Prompt) -> Result<Completion, InferenceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.max_delay_ms > 0 {
            let ms = stable_hash(&prompt.user) % (self.max_delay_ms + 1);
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        Ok(Completion { text: self.reply_for(prompt), attempts: 1 })
    }
}

/// Always returns the same text.
pub struct FixedReplyBackend {
    pub text: String,
    calls: AtomicUsize,
}

impl FixedReplyBackend {
    pub fn new(text: impl Into<String>) -> Self {
        FixedReplyBackend { text: text.into(), calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for FixedReplyBackend {
    fn model(&self) -> &str {
        "mock-fixed"
    }

    async fn complete(&self, _prompt: &Prompt) -> Result<Completion, InferenceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Completion { text: self.text.clone(), attempts: 1 })
    }
}

/// Hands out queued results in call order; an empty queue is a transport error.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<Result<String, InferenceError>>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(script: impl IntoIterator<Item = Result<String, InferenceError>>) -> Self {
        ScriptedBackend { queue: Mutex::new(script.into_iter().collect()), calls: AtomicUsize::new(0) }
    }

    pub fn replies<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| Ok(t.into())))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    fn model(&self) -> &str {
        "mock-scripted"
    }

    async fn complete(&self, _prompt: &Prompt) -> Result<Completion, InferenceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self.queue.lock().expect("script lock").pop_front();
        match next {
            Some(Ok(text)) => Ok(Completion { text, attempts: 1 }),
            Some(Err(e)) => Err(e),
            None => Err(InferenceError::Transport { attempts: 1, message: "script exhausted".into() }),
        }
    }
}

/// Answers through a closure over the prompt.
pub struct FnBackend<F> {
    model: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&Prompt) -> Result<String, InferenceError> + Send + Sync,
{
    pub fn new(model: impl Into<String>, f: F) -> Self {
        FnBackend { model: model.into(), f }
    }
}

#[async_trait]
impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&Prompt) -> Result<String, InferenceError> + Send + Sync,
{
    fn model(&self) -> &str {
        &self.model
    }

    async fn complete(&self, prompt: &Prompt) -> Result<Completion, InferenceError> {
        (self.f)(prompt).map(|text| Completion { text, attempts: 1 })
    }
}
