//! Counselor study workflow: enrollment, scenario progression, feedback,
//! ratings and export. All state is derived from the event log.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resistkit_core::study::{phase_score, Group, HelpfulnessRating, ParticipantScores, StudyDataset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::events::{EventLog, EventLogError, EventPayload, Feedback, NewEvent, Phase, StudyEvent};
use crate::scenario::{ScenarioBank, ScenarioView};
use crate::ApiError;

#[derive(Debug, Clone, Default)]
struct ScenarioProgress {
    original: bool,
    feedback: Option<Feedback>,
    revised: bool,
    ratings: Vec<(Option<String>, i8)>,
}

#[derive(Debug, Clone)]
struct Participant {
    group: Group,
    order: Vec<String>,
    phases: BTreeMap<Phase, HashMap<String, ScenarioProgress>>,
    helpfulness: Option<HelpfulnessRating>,
}

impl Participant {
    fn progress(&self, phase: Phase, scenario: &str) -> Option<&ScenarioProgress> {
        self.phases.get(&phase).and_then(|m| m.get(scenario))
    }

    fn progress_mut(&mut self, phase: Phase, scenario: &str) -> &mut ScenarioProgress {
        self.phases.entry(phase).or_default().entry(scenario.to_string()).or_default()
    }

    /// Next (scenario, step) in a phase, or None when the phase is complete.
    fn next_step(&self, phase: Phase) -> Option<(usize, &str, Step)> {
        self.order.iter().enumerate().find_map(|(i, id)| {
            let p = self.progress(phase, id);
            match (phase, p) {
                (_, None) => Some((i, id.as_str(), Step::Original)),
                (_, Some(p)) if !p.original => Some((i, id.as_str(), Step::Original)),
                (Phase::Post, Some(p)) if !p.revised => Some((i, id.as_str(), Step::Revised)),
                _ => None,
            }
        })
    }

    fn phase_complete(&self, phase: Phase) -> bool {
        self.next_step(phase).is_none()
    }

    fn current_phase(&self) -> Phase {
        if self.phase_complete(Phase::Pre) {
            Phase::Post
        } else {
            Phase::Pre
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Original,
    Revised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextStep {
    Revised,
    NextScenario,
    PhaseComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    #[serde(default)]
    pub group: Option<Group>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub participant_id: String,
    pub group: Group,
    /// Bearer token for the participant's later requests; shown once.
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextScenario {
    Scenario {
        phase: Phase,
        group: Group,
        /// 1-based position in the participant's order.
        ordinal: usize,
        total: usize,
        step: Step,
        scenario: ScenarioView,
        /// Feedback already delivered for this scenario, when resuming.
        #[serde(skip_serializing_if = "Option::is_none")]
        feedback: Option<Feedback>,
    },
    PhaseComplete {
        phase: Phase,
        #[serde(skip_serializing_if = "Option::is_none")]
        next_phase: Option<Phase>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSubmission {
    pub participant_id: String,
    pub phase: Phase,
    pub scenario_id: String,
    pub kind: Step,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAck {
    pub event_id: u64,
    pub participant_id: String,
    pub phase: Phase,
    pub scenario_id: String,
    pub kind: Step,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
    /// Set when automatic feedback could not be produced; retry via the
    /// feedback endpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback_error: Option<String>,
    pub next_step: NextStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub participant_id: String,
    pub scenario_id: String,
    #[serde(default = "post_phase")]
    pub phase: Phase,
}

fn post_phase() -> Phase {
    Phase::Post
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub event_id: u64,
    pub scenario_id: String,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    pub participant_id: String,
    pub phase: Phase,
    pub scenario_id: String,
    pub score: i8,
    #[serde(default)]
    pub rater: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsImport {
    pub ratings: Vec<RatingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportAck {
    pub imported: usize,
    pub first_event_id: Option<u64>,
    pub last_event_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpfulnessSubmission {
    pub participant_id: String,
    pub recognizing: u8,
    pub managing: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAck {
    pub event_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedParticipant {
    pub participant_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantHelpfulness {
    pub participant_id: String,
    #[serde(flatten)]
    pub rating: HelpfulnessRating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyExport {
    pub study_id: String,
    pub dataset: StudyDataset,
    pub skipped: Vec<SkippedParticipant>,
    pub helpfulness: Vec<ParticipantHelpfulness>,
    pub events: Vec<StudyEvent>,
}

struct Inner {
    log: EventLog,
    events: Vec<StudyEvent>,
    participants: BTreeMap<String, Participant>,
    by_token: HashMap<String, String>,
    auto_assigned: u64,
    pending_block: Option<Group>,
}

/// Shared study state; the mutex is the single event-log writer.
pub struct Study {
    study_id: String,
    seed: u64,
    bank: Arc<ScenarioBank>,
    inner: Mutex<Inner>,
}

pub fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn log_error(e: EventLogError) -> ApiError {
    ApiError::internal(format!("event log write failed: {e}"))
}

impl Study {
    /// Opens the study's log and rebuilds state by replaying it.
    pub fn open(study_id: &str, path: &Path, bank: Arc<ScenarioBank>, seed: u64) -> Result<Self, EventLogError> {
        let (log, events) = EventLog::open(path)?;
        let mut inner = Inner {
            log,
            events: Vec::new(),
            participants: BTreeMap::new(),
            by_token: HashMap::new(),
            auto_assigned: 0,
            pending_block: None,
        };
        for (i, ev) in events.into_iter().enumerate() {
            inner.apply(ev, &bank).map_err(|message| EventLogError::Corrupt { line: i + 1, message })?;
        }
        Ok(Study { study_id: study_id.to_string(), seed, bank, inner: Mutex::new(inner) })
    }

    pub fn study_id(&self) -> &str {
        &self.study_id
    }

    pub fn bank(&self) -> &ScenarioBank {
        &self.bank
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Resolves a bearer token to its participant id.
    pub fn authenticate(&self, token: &str) -> Option<(String, Group)> {
        let inner = self.lock();
        let id = inner.by_token.get(&token_hash(token))?;
        Some((id.clone(), inner.participants[id].group))
    }

    pub fn register(&self, req: &RegisterRequest) -> Result<Registration, ApiError> {
        let mut inner = self.lock();
        let participant_id = format!("p{:04}", inner.participants.len() + 1);
        let (group, auto) = match req.group {
            Some(g) => (g, false),
            None => (inner.next_auto_group(self.seed), true),
        };
        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let ev = NewEvent {
            participant_id: participant_id.clone(),
            group,
            phase: None,
            scenario_id: None,
            payload: EventPayload::Registered { token_sha256: token_hash(&token), auto_assigned: auto },
        };
        inner.commit(ev, &self.bank)?;
        Ok(Registration { participant_id, group, token })
    }

    pub fn next(&self, participant_id: &str, phase: Option<Phase>) -> Result<NextScenario, ApiError> {
        let inner = self.lock();
        let p = inner.participant(participant_id)?;
        let phase = phase.unwrap_or_else(|| p.current_phase());
        if phase == Phase::Post && !p.phase_complete(Phase::Pre) {
            return Err(ApiError::conflict("phase_locked", "the pre phase is not complete").at("phase"));
        }
        Ok(match p.next_step(phase) {
            None => NextScenario::PhaseComplete {
                phase,
                next_phase: (phase == Phase::Pre).then_some(Phase::Post),
            },
            Some((i, id, step)) => NextScenario::Scenario {
                phase,
                group: p.group,
                ordinal: i + 1,
                total: p.order.len(),
                step,
                scenario: self.bank.get(id).map(|s| s.view()).ok_or_else(|| ApiError::internal("scenario vanished"))?,
                feedback: p.progress(phase, id).and_then(|s| s.feedback.clone()),
            },
        })
    }

    /// Records a response. Returns the ack and whether automatic feedback
    /// should now be generated.
    pub fn submit(&self, sub: &ResponseSubmission) -> Result<(ResponseAck, bool), ApiError> {
        if sub.text.trim().is_empty() {
            return Err(ApiError::bad_request("empty_text", "response text must not be empty").at("text"));
        }
        let mut inner = self.lock();
        let p = inner.participant(&sub.participant_id)?;
        let group = p.group;
        if self.bank.get(&sub.scenario_id).is_none() {
            return Err(ApiError::bad_request("unknown_scenario", format!("no scenario {}", sub.scenario_id)).at("scenario_id"));
        }
        if sub.phase == Phase::Pre && sub.kind == Step::Revised {
            return Err(ApiError::bad_request("no_revision_in_pre", "the pre phase takes only original responses").at("kind"));
        }
        let done = p.progress(sub.phase, &sub.scenario_id);
        let duplicate = match sub.kind {
            Step::Original => done.is_some_and(|s| s.original),
            Step::Revised => done.is_some_and(|s| s.revised),
        };
        if duplicate {
            return Err(ApiError::conflict(
                "duplicate_submission",
                format!("{:?} response for {} in the {} phase already recorded", sub.kind, sub.scenario_id, sub.phase.as_str()),
            ));
        }
        if sub.phase == Phase::Post && !p.phase_complete(Phase::Pre) {
            return Err(ApiError::conflict("phase_locked", "the pre phase is not complete").at("phase"));
        }
        match p.next_step(sub.phase) {
            Some((_, id, step)) if id == sub.scenario_id && step == sub.kind => {}
            Some((_, id, step)) => {
                return Err(ApiError::conflict(
                    "out_of_order",
                    format!("expected the {step:?} response for {id}").to_lowercase(),
                ))
            }
            None => return Err(ApiError::conflict("phase_complete", "this phase is already complete")),
        }
        if sub.kind == Step::Revised && group == Group::Experimental && done.and_then(|s| s.feedback.as_ref()).is_none() {
            return Err(ApiError::conflict("feedback_pending", "request feedback before submitting the revision"));
        }
        let payload = match sub.kind {
            Step::Original => EventPayload::OriginalResponse { text: sub.text.clone() },
            Step::Revised => EventPayload::RevisedResponse { text: sub.text.clone() },
        };
        let ev = inner.commit(
            NewEvent {
                participant_id: sub.participant_id.clone(),
                group,
                phase: Some(sub.phase),
                scenario_id: Some(sub.scenario_id.clone()),
                payload,
            },
            &self.bank,
        )?;
        let wants_feedback = group == Group::Experimental && sub.phase == Phase::Post && sub.kind == Step::Original;
        let p = inner.participant(&sub.participant_id)?;
        let next_step = if sub.phase == Phase::Post && sub.kind == Step::Original {
            NextStep::Revised
        } else if p.phase_complete(sub.phase) {
            NextStep::PhaseComplete
        } else {
            NextStep::NextScenario
        };
        let ack = ResponseAck {
            event_id: ev.event_id,
            participant_id: sub.participant_id.clone(),
            phase: sub.phase,
            scenario_id: sub.scenario_id.clone(),
            kind: sub.kind,
            feedback: None,
            feedback_error: None,
            next_step,
        };
        Ok((ack, wants_feedback))
    }

    /// Checks a feedback request. Returns the already delivered feedback
    /// when there is one.
    pub fn feedback_state(&self, req: &FeedbackRequest) -> Result<Option<FeedbackAck>, ApiError> {
        let inner = self.lock();
        let p = inner.participant(&req.participant_id)?;
        if p.group != Group::Experimental {
            return Err(ApiError::forbidden("feedback_not_available", "the control group receives no feedback"));
        }
        if req.phase != Phase::Post {
            return Err(ApiError::bad_request("feedback_post_only", "feedback is given in the post phase only").at("phase"));
        }
        if self.bank.get(&req.scenario_id).is_none() {
            return Err(ApiError::bad_request("unknown_scenario", format!("no scenario {}", req.scenario_id)).at("scenario_id"));
        }
        match p.progress(req.phase, &req.scenario_id) {
            Some(s) if s.original => Ok(s.feedback.clone().map(|feedback| FeedbackAck {
                event_id: inner.feedback_event_id(&req.participant_id, &req.scenario_id).unwrap_or(0),
                scenario_id: req.scenario_id.clone(),
                feedback,
            })),
            _ => Err(ApiError::conflict("no_original", "submit the original response first")),
        }
    }

    /// Appends feedback unless some was recorded meanwhile.
    pub fn deliver_feedback(&self, participant_id: &str, scenario_id: &str, feedback: Feedback) -> Result<FeedbackAck, ApiError> {
        let mut inner = self.lock();
        let p = inner.participant(participant_id)?;
        if p.group != Group::Experimental {
            return Err(ApiError::forbidden("feedback_not_available", "the control group receives no feedback"));
        }
        let group = p.group;
        if let Some(existing) = p.progress(Phase::Post, scenario_id).and_then(|s| s.feedback.clone()) {
            return Ok(FeedbackAck {
                event_id: inner.feedback_event_id(participant_id, scenario_id).unwrap_or(0),
                scenario_id: scenario_id.to_string(),
                feedback: existing,
            });
        }
        let ev = inner.commit(
            NewEvent {
                participant_id: participant_id.to_string(),
                group,
                phase: Some(Phase::Post),
                scenario_id: Some(scenario_id.to_string()),
                payload: EventPayload::FeedbackDelivered(feedback.clone()),
            },
            &self.bank,
        )?;
        Ok(FeedbackAck { event_id: ev.event_id, scenario_id: scenario_id.to_string(), feedback })
    }

    /// Validates every row first; nothing is written unless all pass.
    pub fn import_ratings(&self, req: &RatingsImport) -> Result<ImportAck, ApiError> {
        let mut inner = self.lock();
        let mut seen: HashMap<(&str, Phase, &str, Option<&str>), usize> = HashMap::new();
        let mut batch = Vec::with_capacity(req.ratings.len());
        for (i, r) in req.ratings.iter().enumerate() {
            let at = |f: &str| format!("ratings[{i}].{f}");
            if !(-1..=1).contains(&r.score) {
                return Err(ApiError::bad_request("score_out_of_range", format!("score {} not in -1..=1", r.score)).at(at("score")));
            }
            let p = inner
                .participants
                .get(&r.participant_id)
                .ok_or_else(|| ApiError::bad_request("unknown_participant", format!("no participant {}", r.participant_id)).at(at("participant_id")))?;
            let progress = p.progress(r.phase, &r.scenario_id);
            let rated_response = match r.phase {
                Phase::Pre => progress.is_some_and(|s| s.original),
                Phase::Post => progress.is_some_and(|s| s.revised),
            };
            if !rated_response {
                return Err(ApiError::bad_request(
                    "no_response",
                    format!("{} has no {} response for {} to rate", r.participant_id, r.phase.as_str(), r.scenario_id),
                )
                .at(at("scenario_id")));
            }
            let key = (r.participant_id.as_str(), r.phase, r.scenario_id.as_str(), r.rater.as_deref());
            let already = progress.is_some_and(|s| s.ratings.iter().any(|(rater, _)| rater.as_deref() == r.rater.as_deref()));
            if already || seen.insert(key, i).is_some() {
                return Err(ApiError::conflict(
                    "duplicate_rating",
                    format!("{} {} {} already rated by this rater", r.participant_id, r.phase.as_str(), r.scenario_id),
                )
                .at(at("scenario_id")));
            }
            batch.push(NewEvent {
                participant_id: r.participant_id.clone(),
                group: p.group,
                phase: Some(r.phase),
                scenario_id: Some(r.scenario_id.clone()),
                payload: EventPayload::Rating { score: r.score, rater: r.rater.clone() },
            });
        }
        let events = inner.commit_all(batch, &self.bank)?;
        Ok(ImportAck {
            imported: events.len(),
            first_event_id: events.first().map(|e| e.event_id),
            last_event_id: events.last().map(|e| e.event_id),
        })
    }

    pub fn submit_helpfulness(&self, sub: &HelpfulnessSubmission) -> Result<EventAck, ApiError> {
        for (field, v) in [("recognizing", sub.recognizing), ("managing", sub.managing)] {
            if !(1..=5).contains(&v) {
                return Err(ApiError::bad_request("rating_out_of_range", format!("{field} {v} not in 1..=5")).at(field));
            }
        }
        let mut inner = self.lock();
        let p = inner.participant(&sub.participant_id)?;
        if p.group != Group::Experimental {
            return Err(ApiError::forbidden("helpfulness_not_applicable", "helpfulness is rated by the experimental group"));
        }
        if !p.phase_complete(Phase::Post) {
            return Err(ApiError::conflict("phase_incomplete", "finish the post phase first"));
        }
        if p.helpfulness.is_some() {
            return Err(ApiError::conflict("duplicate_submission", "helpfulness already rated"));
        }
        let group = p.group;
        let ev = inner.commit(
            NewEvent {
                participant_id: sub.participant_id.clone(),
                group,
                phase: None,
                scenario_id: None,
                payload: EventPayload::Helpfulness { recognizing: sub.recognizing, managing: sub.managing },
            },
            &self.bank,
        )?;
        Ok(EventAck { event_id: ev.event_id })
    }

    pub fn export(&self) -> StudyExport {
        let inner = self.lock();
        let mut participants = Vec::new();
        let mut skipped = Vec::new();
        let mut helpfulness = Vec::new();
        for (id, p) in &inner.participants {
            if let Some(rating) = p.helpfulness {
                helpfulness.push(ParticipantHelpfulness { participant_id: id.clone(), rating });
            }
            match phase_scores(p) {
                Ok((pre, post)) => participants.push(ParticipantScores { participant_id: id.clone(), group: p.group, pre, post }),
                Err(reason) => skipped.push(SkippedParticipant { participant_id: id.clone(), reason }),
            }
        }
        StudyExport {
            study_id: self.study_id.clone(),
            dataset: StudyDataset { participants },
            skipped,
            helpfulness,
            events: inner.events.clone(),
        }
    }

    pub fn event_count(&self) -> usize {
        self.lock().events.len()
    }
}

/// Mean rating of the pre originals and of the post revisions.
fn phase_scores(p: &Participant) -> Result<(f64, f64), String> {
    if let Some(phase) = [Phase::Pre, Phase::Post].into_iter().find(|&ph| !p.phase_complete(ph)) {
        return Err(format!("{} phase incomplete", phase.as_str()));
    }
    let mut out = [0.0; 2];
    for (k, phase) in [Phase::Pre, Phase::Post].into_iter().enumerate() {
        let mut ratings = Vec::new();
        for id in &p.order {
            let s = p.progress(phase, id).map(|s| &s.ratings[..]).unwrap_or(&[]);
            if s.is_empty() {
                return Err(format!("{} response to {id} not rated", phase.as_str()));
            }
            ratings.extend(s.iter().map(|(_, r)| *r));
        }
        out[k] = phase_score(&ratings).map_err(|e| e.to_string())?;
    }
    Ok((out[0], out[1]))
}

impl Inner {
    fn participant(&self, id: &str) -> Result<&Participant, ApiError> {
        self.participants
            .get(id)
            .ok_or_else(|| ApiError::not_found("unknown_participant", format!("no participant {id}")).at("participant_id"))
    }

    fn feedback_event_id(&self, participant_id: &str, scenario_id: &str) -> Option<u64> {
        self.events
            .iter()
            .rev()
            .find(|e| {
                e.participant_id == participant_id
                    && e.scenario_id.as_deref() == Some(scenario_id)
                    && matches!(e.payload, EventPayload::FeedbackDelivered(_))
            })
            .map(|e| e.event_id)
    }

    /// Block-of-two alternation: the first of each pair is drawn, the second
    /// gets the other group.
    fn next_auto_group(&self, seed: u64) -> Group {
        match self.pending_block {
            Some(first) => match first {
                Group::Control => Group::Experimental,
                Group::Experimental => Group::Control,
            },
            None => {
                let block = self.auto_assigned / 2;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ block.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                if rng.gen_bool(0.5) {
                    Group::Control
                } else {
                    Group::Experimental
                }
            }
        }
    }

    fn commit(&mut self, ev: NewEvent, bank: &ScenarioBank) -> Result<StudyEvent, ApiError> {
        let event = self.log.append(ev).map_err(log_error)?;
        self.apply(event.clone(), bank).map_err(ApiError::internal)?;
        Ok(event)
    }

    fn commit_all(&mut self, evs: Vec<NewEvent>, bank: &ScenarioBank) -> Result<Vec<StudyEvent>, ApiError> {
        if evs.is_empty() {
            return Ok(Vec::new());
        }
        let events = self.log.append_all(evs).map_err(log_error)?;
        for e in &events {
            self.apply(e.clone(), bank).map_err(ApiError::internal)?;
        }
        Ok(events)
    }

    /// Folds one logged event into the derived state.
    fn apply(&mut self, ev: StudyEvent, bank: &ScenarioBank) -> Result<(), String> {
        let pid = ev.participant_id.clone();
        match &ev.payload {
            EventPayload::Registered { token_sha256, auto_assigned } => {
                if self.participants.contains_key(&pid) {
                    return Err(format!("{pid} registered twice"));
                }
                if *auto_assigned {
                    self.pending_block = match self.pending_block {
                        None => Some(ev.group),
                        Some(_) => None,
                    };
                    self.auto_assigned += 1;
                }
                self.by_token.insert(token_sha256.clone(), pid.clone());
                let order = bank.order_for(&pid).into_iter().map(|s| s.scenario_id.clone()).collect();
                self.participants.insert(
                    pid,
                    Participant {
                        group: ev.group,
                        order,
                        phases: BTreeMap::new(),
                        helpfulness: None,
                    },
                );
            }
            payload => {
                let p = self.participants.get_mut(&pid).ok_or_else(|| format!("event for unregistered {pid}"))?;
                if p.group != ev.group {
                    return Err(format!("group of {pid} changed"));
                }
                match payload {
                    EventPayload::Helpfulness { recognizing, managing } => {
                        p.helpfulness = Some(HelpfulnessRating { recognizing: *recognizing, managing: *managing });
                    }
                    _ => {
                        let (phase, sid) = ev
                            .phase
                            .zip(ev.scenario_id.as_deref())
                            .ok_or_else(|| format!("event {} lacks phase or scenario", ev.event_id))?;
                        let s = p.progress_mut(phase, sid);
                        match payload {
                            EventPayload::OriginalResponse { .. } => s.original = true,
                            EventPayload::RevisedResponse { .. } => s.revised = true,
                            EventPayload::FeedbackDelivered(f) => {
                                if ev.group != Group::Experimental {
                                    return Err(format!("feedback recorded for control participant {pid}"));
                                }
                                s.feedback = Some(f.clone());
                            }
                            EventPayload::Rating { score, rater } => s.ratings.push((rater.clone(), *score)),
                            EventPayload::Registered { .. } | EventPayload::Helpfulness { .. } => unreachable!(),
                        }
                    }
                }
            }
        }
        self.events.push(ev);
        Ok(())
    }
}
