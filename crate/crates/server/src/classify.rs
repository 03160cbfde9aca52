//! Live classification: binary, fine, or binary-then-fine on one snippet.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use axum::http::StatusCode;
use resistkit_core::corpus::{Sample, Speaker, Turn};
use resistkit_core::prompting::{build_prompt_with, ExemplarSet, PromptSpec, PromptTemplates, ShotMode};
use resistkit_core::taxonomy::{coarse_of, CoarsePattern, Label, PredictedLabel, Task};
use resistkit_inference::{classify, parse_completion, ChatBackend, InferenceError};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::ApiError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyTask {
    Binary,
    Fine,
    #[default]
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub history: Vec<Turn>,
    pub response: String,
    #[serde(default)]
    pub task: ClassifyTask,
    #[serde(default = "zero_shot")]
    pub shot_mode: ShotMode,
    #[serde(default)]
    pub backend: Option<String>,
}

fn zero_shot() -> ShotMode {
    ShotMode::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub label: PredictedLabel,
    pub rationale: String,
    pub valid: bool,
    pub raw_text: String,
    pub attempts: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResult {
    pub task: ClassifyTask,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binary: Option<StageResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine: Option<StageResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse: Option<CoarsePattern>,
    pub backend: String,
    pub model: String,
    pub latency_ms: u64,
}

impl ClassifyResult {
    /// Final label: the fine label when one was produced, else the binary one.
    pub fn label(&self) -> PredictedLabel {
        match (&self.binary, &self.fine) {
            (_, Some(f)) => f.label,
            (Some(b), None) => b.label,
            (None, None) => PredictedLabel::Invalid,
        }
    }

    pub fn rationale(&self) -> &str {
        match (&self.binary, &self.fine) {
            (_, Some(f)) => &f.rationale,
            (Some(b), None) => &b.rationale,
            (None, None) => "",
        }
    }
}

/// Named backends behind a shared in-flight bound.
pub struct Classifier {
    backends: BTreeMap<String, Arc<dyn ChatBackend>>,
    default_backend: String,
    exemplars: HashMap<Task, ExemplarSet>,
    templates: PromptTemplates,
    limit: Arc<Semaphore>,
    retry_after_secs: u64,
}

impl Classifier {
    pub fn new(name: &str, backend: Arc<dyn ChatBackend>, parallelism: usize) -> Self {
        Classifier {
            backends: BTreeMap::from([(name.to_string(), backend)]),
            default_backend: name.to_string(),
            exemplars: HashMap::new(),
            templates: PromptTemplates::english(),
            limit: Arc::new(Semaphore::new(parallelism.max(1))),
            retry_after_secs: 5,
        }
    }

    pub fn with_backend(mut self, name: &str, backend: Arc<dyn ChatBackend>) -> Self {
        self.backends.insert(name.to_string(), backend);
        self
    }

    pub fn with_exemplars(mut self, set: ExemplarSet) -> Self {
        self.exemplars.insert(set.task, set);
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn backend_names(&self) -> Vec<&str> {
        self.backends.keys().map(String::as_str).collect()
    }

    fn validate(&self, req: &ClassifyRequest) -> Result<(), ApiError> {
        match req.history.last() {
            None => {
                return Err(ApiError::bad_request("invalid_history", "history must not be empty").at("history"))
            }
            Some(t) if t.speaker != Speaker::Counselor => {
                return Err(ApiError::bad_request("invalid_history", "history must end with a counselor turn")
                    .at(format!("history[{}].speaker", req.history.len() - 1)))
            }
            _ => {}
        }
        if req.response.trim().is_empty() {
            return Err(ApiError::bad_request("invalid_response", "response must not be empty").at("response"));
        }
        if req.shot_mode == ShotMode::Few {
            let needed: &[Task] = match req.task {
                ClassifyTask::Binary => &[Task::Binary],
                ClassifyTask::Fine => &[Task::Fine],
                ClassifyTask::TwoStage => &[Task::Binary, Task::Fine],
            };
            if let Some(t) = needed.iter().find(|t| !self.exemplars.contains_key(t)) {
                return Err(ApiError::bad_request(
                    "few_shot_unavailable",
                    format!("no exemplars loaded for the {} task", t.as_str()),
                )
                .at("shot_mode"));
            }
        }
        Ok(())
    }

    fn backend_error(&self, e: InferenceError) -> ApiError {
        let retryable = e.is_retryable();
        let code = match e {
            InferenceError::Transport { .. } => "backend_unavailable",
            InferenceError::BackendRejection { .. } => "backend_rejected",
            _ => "backend_error",
        };
        let mut err = ApiError::new(StatusCode::BAD_GATEWAY, code, e.to_string());
        if retryable {
            err.retry_after_secs = Some(self.retry_after_secs);
        }
        err
    }

    async fn stage(
        &self,
        backend: &dyn ChatBackend,
        task: Task,
        shot_mode: ShotMode,
        sample: &Sample,
    ) -> Result<StageResult, ApiError> {
        let spec = PromptSpec { task, shot_mode, exemplars: self.exemplars.get(&task), sample };
        let prompt = build_prompt_with(&spec, &self.templates)
            .map_err(|e| ApiError::bad_request("prompt_error", e.to_string()))?;
        let _permit = self.limit.acquire().await.map_err(|e| ApiError::internal(e.to_string()))?;
        let raw = classify(backend, &sample.sample_id, &prompt)
            .await
            .map_err(|e| self.backend_error(e))?;
        let p = parse_completion(&raw, task);
        Ok(StageResult {
            label: p.label,
            rationale: p.rationale,
            valid: p.valid,
            raw_text: p.raw_text,
            attempts: p.attempts,
            latency_ms: p.latency_ms,
        })
    }

    pub async fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResult, ApiError> {
        let start = Instant::now();
        let name = req.backend.clone().unwrap_or_else(|| self.default_backend.clone());
        let backend = self.backends.get(&name).cloned().ok_or_else(|| {
            ApiError::bad_request("unknown_backend", format!("no backend named {name:?}")).at("backend")
        })?;
        self.validate(req)?;
        let sample = Sample {
            sample_id: "request".into(),
            history: req.history.clone(),
            response: req.response.clone(),
            gold: None,
            rationale: None,
            extra: Default::default(),
        };
        let (binary, fine) = match req.task {
            ClassifyTask::Binary => (Some(self.stage(backend.as_ref(), Task::Binary, req.shot_mode, &sample).await?), None),
            ClassifyTask::Fine => (None, Some(self.stage(backend.as_ref(), Task::Fine, req.shot_mode, &sample).await?)),
            ClassifyTask::TwoStage => {
                let b = self.stage(backend.as_ref(), Task::Binary, req.shot_mode, &sample).await?;
                let fine = if b.label == PredictedLabel::Label(Label::Resistance) {
                    Some(self.stage(backend.as_ref(), Task::Fine, req.shot_mode, &sample).await?)
                } else {
                    None
                };
                (Some(b), fine)
            }
        };
        let coarse = fine.as_ref().and_then(|f| f.label.label()).and_then(|l| coarse_of(l).ok());
        Ok(ClassifyResult {
            task: req.task,
            binary,
            fine,
            coarse,
            backend: name,
            model: backend.model().to_string(),
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}
