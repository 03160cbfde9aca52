//! Router, shared state and the serve loop.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap};
use axum::routing::{get, post};
use axum::{Json, Router};
use resistkit_core::corpus::Turn;
use resistkit_core::prompting::ShotMode;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::classify::{ClassifyRequest, ClassifyResult, ClassifyTask, Classifier};
use crate::events::{Feedback, Phase};
use crate::sessions::{self, AnalyzeRequest, AnalyzeResponse};
use crate::study::{
    EventAck, FeedbackAck, FeedbackRequest, HelpfulnessSubmission, ImportAck, NextScenario, RatingsImport, RegisterRequest,
    Registration, ResponseAck, ResponseSubmission, Study, StudyExport,
};
use crate::{ApiError, ApiJson};

#[derive(Clone)]
pub struct AppState {
    pub classifier: Arc<Classifier>,
    pub study: Arc<Study>,
    /// Required on ratings import and export when set.
    pub admin_token: Option<String>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/classify", post(classify))
        .route("/v1/sessions/analyze", post(analyze))
        .route("/v1/study/participants", post(register))
        .route("/v1/study/scenarios/next", get(next_scenario))
        .route("/v1/study/responses", post(submit_response))
        .route("/v1/study/feedback", post(request_feedback))
        .route("/v1/study/ratings/import", post(import_ratings))
        .route("/v1/study/helpfulness", post(helpfulness))
        .route("/v1/study/export", get(export))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

async fn classify(State(st): State<AppState>, ApiJson(req): ApiJson<ClassifyRequest>) -> Result<Json<ClassifyResult>, ApiError> {
    st.classifier.classify(&req).await.map(Json)
}

async fn analyze(ApiJson(req): ApiJson<AnalyzeRequest>) -> Result<Json<AnalyzeResponse>, ApiError> {
    sessions::analyze(&req).map(Json)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// The token must belong to `participant_id`.
fn authorize(st: &AppState, headers: &HeaderMap, participant_id: &str) -> Result<(), ApiError> {
    let token = bearer(headers).ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
    let (owner, _) = st.study.authenticate(token).ok_or_else(|| ApiError::unauthorized("unknown token"))?;
    if owner != participant_id {
        return Err(ApiError::forbidden("token_mismatch", "token belongs to another participant").at("participant_id"));
    }
    Ok(())
}

fn authorize_admin(st: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    match &st.admin_token {
        None => Ok(()),
        Some(expected) => match bearer(headers) {
            Some(t) if t == expected => Ok(()),
            Some(_) => Err(ApiError::unauthorized("invalid admin token")),
            None => Err(ApiError::unauthorized("missing admin token")),
        },
    }
}

/// Runs a study operation off the async workers; it may fsync.
async fn blocking<T, F>(study: &Arc<Study>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Study) -> Result<T, ApiError> + Send + 'static,
{
    let study = study.clone();
    tokio::task::spawn_blocking(move || f(&study))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn register(State(st): State<AppState>, body: axum::body::Bytes) -> Result<Json<Registration>, ApiError> {
    let req: RegisterRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RegisterRequest { group: None }
    } else {
        crate::parse_body(&body)?
    };
    blocking(&st.study, move |s| s.register(&req)).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    participant: String,
    #[serde(default)]
    phase: Option<Phase>,
}

async fn next_scenario(
    State(st): State<AppState>,
    headers: HeaderMap,
    query: Result<Query<NextQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<NextScenario>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request("invalid_query", e.body_text()).at("participant"))?;
    authorize(&st, &headers, &q.participant)?;
    st.study.next(&q.participant, q.phase).map(Json)
}

/// Classifies the client turn of a scenario for feedback.
async fn generate_feedback(st: &AppState, scenario_id: &str) -> Result<Feedback, ApiError> {
    let scenario = st
        .study
        .bank()
        .get(scenario_id)
        .ok_or_else(|| ApiError::bad_request("unknown_scenario", format!("no scenario {scenario_id}")).at("scenario_id"))?;
    let req = ClassifyRequest {
        history: scenario.history.iter().cloned().collect::<Vec<Turn>>(),
        response: scenario.response.clone(),
        task: ClassifyTask::TwoStage,
        shot_mode: ShotMode::Zero,
        backend: None,
    };
    let r = st.classifier.classify(&req).await?;
    Ok(Feedback {
        label: r.label(),
        coarse: r.coarse,
        rationale: r.rationale().to_string(),
        valid: r.label().is_valid(),
        model: r.model,
    })
}

async fn submit_response(
    State(st): State<AppState>,
    headers: HeaderMap,
    ApiJson(sub): ApiJson<ResponseSubmission>,
) -> Result<Json<ResponseAck>, ApiError> {
    authorize(&st, &headers, &sub.participant_id)?;
    let s2 = sub.clone();
    let (mut ack, wants_feedback) = blocking(&st.study, move |s| s.submit(&s2)).await?;
    if wants_feedback {
        match generate_feedback(&st, &sub.scenario_id).await {
            Ok(fb) => {
                let (pid, sid) = (sub.participant_id.clone(), sub.scenario_id.clone());
                match blocking(&st.study, move |s| s.deliver_feedback(&pid, &sid, fb)).await {
                    Ok(delivered) => ack.feedback = Some(delivered.feedback),
                    Err(e) => ack.feedback_error = Some(e.message),
                }
            }
            Err(e) => ack.feedback_error = Some(format!("{}: {}", e.code, e.message)),
        }
    }
    Ok(Json(ack))
}

async fn request_feedback(
    State(st): State<AppState>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<FeedbackRequest>,
) -> Result<Json<FeedbackAck>, ApiError> {
    authorize(&st, &headers, &req.participant_id)?;
    let r2 = req.clone();
    if let Some(existing) = blocking(&st.study, move |s| s.feedback_state(&r2)).await? {
        return Ok(Json(existing));
    }
    let fb = generate_feedback(&st, &req.scenario_id).await?;
    blocking(&st.study, move |s| s.deliver_feedback(&req.participant_id, &req.scenario_id, fb)).await.map(Json)
}

async fn import_ratings(
    State(st): State<AppState>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<RatingsImport>,
) -> Result<Json<ImportAck>, ApiError> {
    authorize_admin(&st, &headers)?;
    blocking(&st.study, move |s| s.import_ratings(&req)).await.map(Json)
}

async fn helpfulness(
    State(st): State<AppState>,
    headers: HeaderMap,
    ApiJson(sub): ApiJson<HelpfulnessSubmission>,
) -> Result<Json<EventAck>, ApiError> {
    authorize(&st, &headers, &sub.participant_id)?;
    blocking(&st.study, move |s| s.submit_helpfulness(&sub)).await.map(Json)
}

async fn export(State(st): State<AppState>, headers: HeaderMap) -> Result<Json<StudyExport>, ApiError> {
    authorize_admin(&st, &headers)?;
    blocking(&st.study, |s| Ok(s.export())).await.map(Json)
}
