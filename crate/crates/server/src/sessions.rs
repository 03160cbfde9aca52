//! Session analytics over client-utterance predictions.

use std::collections::{HashMap, HashSet};

use resistkit_core::alliance::{correlate_alliance, prevalence, profiles_from_predictions, CorrelationTable, PrevalenceReport, SessionProfile};
use resistkit_core::corpus::{AllianceScores, Session, Speaker};
use resistkit_core::taxonomy::PredictedLabel;
use serde::{Deserialize, Serialize};

use crate::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePrediction {
    pub sample_id: String,
    pub label: PredictedLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub sessions: Vec<Session>,
    pub predictions: Vec<UtterancePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub profiles: Vec<SessionProfile>,
    pub prevalence: PrevalenceReport,
    /// Present when at least three sessions carry alliance scores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlations: Option<CorrelationTable>,
    /// Client utterances with no prediction, by sample id.
    pub unpredicted: Vec<String>,
}

pub fn analyze(req: &AnalyzeRequest) -> Result<AnalyzeResponse, ApiError> {
    if req.sessions.is_empty() {
        return Err(ApiError::bad_request("empty", "no sessions given").at("sessions"));
    }
    let mut ids = HashSet::new();
    for (i, s) in req.sessions.iter().enumerate() {
        s.validate(i + 1).map_err(|e| ApiError::bad_request("invalid_session", e.to_string()).at(format!("sessions[{i}]")))?;
        if !ids.insert(s.session_id.as_str()) {
            return Err(ApiError::bad_request("duplicate_session", format!("session {} given twice", s.session_id))
                .at(format!("sessions[{i}].session_id")));
        }
    }
    let client_ids: HashSet<String> = req
        .sessions
        .iter()
        .flat_map(|s| s.client_utterances().map(move |u| format!("{}:{}", s.session_id, u.index)))
        .collect();
    let mut predictions: HashMap<String, PredictedLabel> = HashMap::new();
    for (i, p) in req.predictions.iter().enumerate() {
        if !client_ids.contains(&p.sample_id) {
            return Err(ApiError::bad_request(
                "unknown_sample",
                format!("{} is not a client utterance of any given session", p.sample_id),
            )
            .at(format!("predictions[{i}].sample_id")));
        }
        if predictions.insert(p.sample_id.clone(), p.label).is_some() {
            return Err(ApiError::bad_request("duplicate_prediction", format!("{} predicted twice", p.sample_id))
                .at(format!("predictions[{i}].sample_id")));
        }
    }
    let profiles = profiles_from_predictions(&req.sessions, &predictions)
        .map_err(|e| ApiError::bad_request("analysis_failed", e.to_string()))?;
    let prevalence = prevalence(&profiles)
        .map_err(|e| ApiError::bad_request("no_predictions", e.to_string()).at("predictions"))?;
    let alliance: HashMap<String, AllianceScores> = req
        .sessions
        .iter()
        .filter_map(|s| s.alliance.map(|a| (s.session_id.clone(), a)))
        .collect();
    let correlations = correlate_alliance(&profiles, &alliance).ok();
    let mut unpredicted: Vec<String> = req
        .sessions
        .iter()
        .flat_map(|s| {
            s.utterances
                .iter()
                .filter(|u| u.speaker == Speaker::Client)
                .map(move |u| format!("{}:{}", s.session_id, u.index))
        })
        .filter(|id| !predictions.contains_key(id))
        .collect();
    unpredicted.sort();
    Ok(AnalyzeResponse { profiles, prevalence, correlations, unpredicted })
}
