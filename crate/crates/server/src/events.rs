//! Durable study event log: one JSON record per line, fsync'd before the
//! caller is told the append succeeded.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use resistkit_core::study::Group;
use resistkit_core::taxonomy::{CoarsePattern, PredictedLabel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("event log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("event log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("event encoding: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub label: PredictedLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse: Option<CoarsePattern>,
    pub rationale: String,
    pub valid: bool,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    Registered { token_sha256: String, auto_assigned: bool },
    OriginalResponse { text: String },
    FeedbackDelivered(Feedback),
    RevisedResponse { text: String },
    Rating {
        score: i8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rater: Option<String>,
    },
    Helpfulness { recognizing: u8, managing: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEvent {
    pub event_id: u64,
    pub timestamp_ms: u64,
    pub participant_id: String,
    pub group: Group,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<String>,
    pub payload: EventPayload,
}

/// An event before the log assigns its id and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEvent {
    pub participant_id: String,
    pub group: Group,
    pub phase: Option<Phase>,
    pub scenario_id: Option<String>,
    pub payload: EventPayload,
}

/// Single-writer append-only log. Callers serialize access.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_id: u64,
}

impl EventLog {
    /// Opens (creating if needed) and replays the log. A torn final line is
    /// cut off; a malformed complete line is an error.
    pub fn open(path: &Path) -> Result<(Self, Vec<StudyEvent>), EventLogError> {
        let io = |source| EventLogError::Io { path: path.to_path_buf(), source };
        let fresh = !path.exists();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io)?;
        if fresh {
            file.sync_all().map_err(io)?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                File::open(dir).and_then(|d| d.sync_all()).map_err(io)?;
            }
        }
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            tracing::warn!(path = %path.display(), dropped = bytes.len() - complete, "truncating torn event record");
            file.set_len(complete as u64).map_err(io)?;
            file.sync_all().map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        let mut events: Vec<StudyEvent> = Vec::new();
        for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let ev: StudyEvent = serde_json::from_slice(line)
                .map_err(|e| EventLogError::Corrupt { line: i + 1, message: e.to_string() })?;
            if let Some(prev) = events.last() {
                if ev.event_id <= prev.event_id {
                    return Err(EventLogError::Corrupt {
                        line: i + 1,
                        message: format!("event_id {} does not follow {}", ev.event_id, prev.event_id),
                    });
                }
            }
            events.push(ev);
        }
        let next_id = events.last().map_or(1, |e| e.event_id + 1);
        Ok((EventLog { path: path.to_path_buf(), file, next_id }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes and syncs one event; returns it only once it is on disk.
    pub fn append(&mut self, ev: NewEvent) -> Result<StudyEvent, EventLogError> {
        let event = StudyEvent {
            event_id: self.next_id,
            timestamp_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            participant_id: ev.participant_id,
            group: ev.group,
            phase: ev.phase,
            scenario_id: ev.scenario_id,
            payload: ev.payload,
        };
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        self.write_synced(&line)?;
        self.next_id += 1;
        Ok(event)
    }

    /// Appends several events with one sync; all or none become visible to
    /// replay except for a torn tail, which replay drops.
    pub fn append_all(&mut self, evs: Vec<NewEvent>) -> Result<Vec<StudyEvent>, EventLogError> {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        let mut buf = Vec::new();
        let mut out = Vec::with_capacity(evs.len());
        for (k, ev) in evs.into_iter().enumerate() {
            let event = StudyEvent {
                event_id: self.next_id + k as u64,
                timestamp_ms: now,
                participant_id: ev.participant_id,
                group: ev.group,
                phase: ev.phase,
                scenario_id: ev.scenario_id,
                payload: ev.payload,
            };
            serde_json::to_writer(&mut buf, &event)?;
            buf.push(b'\n');
            out.push(event);
        }
        self.write_synced(&buf)?;
        self.next_id += out.len() as u64;
        Ok(out)
    }

    fn write_synced(&mut self, bytes: &[u8]) -> Result<(), EventLogError> {
        let io = |source| EventLogError::Io { path: self.path.clone(), source };
        self.file.write_all(bytes).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}
