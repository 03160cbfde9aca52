use resistkit_core::taxonomy::{normalize_label, PredictedLabel, Task};
use serde::{Deserialize, Serialize};

use crate::RawCompletion;

/// One line of a run file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub task: Task,
    pub label: PredictedLabel,
    pub rationale: String,
    pub valid: bool,
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

impl Prediction {
    /// Everything except the timing measurement.
    pub fn same_content(&self, other: &Prediction) -> bool {
        Prediction { latency_ms: 0, ..self.clone() } == Prediction { latency_ms: 0, ..other.clone() }
    }
}

const MARKUP: &[char] = &['#', '*', '>', '-', '`', '_', '"', '\'', '•'];

fn strip_markup(line: &str) -> &str {
    line.trim_start_matches(|c: char| c.is_whitespace() || MARKUP.contains(&c))
}

/// Returns the text after `key` when the line (markup stripped) starts with it.
fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let s = strip_markup(line);
    let head = s.get(..key.len())?;
    head.eq_ignore_ascii_case(key).then(|| &s[key.len()..])
}

fn clean_value(v: &str) -> &str {
    v.trim_matches(|c: char| c.is_whitespace() || c == '.' || c == '“' || c == '”' || MARKUP.contains(&c))
}

/// Pulls the label and rationale out of a two-line reply. Never fails: an
/// absent or unrecognized behavior line gives `Invalid`.
pub fn parse_reply(text: &str, task: Task) -> (PredictedLabel, String) {
    let lines: Vec<&str> = text.lines().collect();
    let Some((at, value)) = lines
        .iter()
        .enumerate()
        .find_map(|(i, l)| field(l, "behavior:").or_else(|| field(l, "behaviour:")).map(|v| (i, v)))
    else {
        return (PredictedLabel::Invalid, String::new());
    };
    let label = match normalize_label(clean_value(value), task) {
        Ok(l) => PredictedLabel::Label(l),
        Err(_) => return (PredictedLabel::Invalid, String::new()),
    };
    let mut rationale = String::new();
    if let Some((start, first)) = lines
        .iter()
        .enumerate()
        .skip(at + 1)
        .find_map(|(i, l)| field(l, "reason:").map(|v| (i, v)))
    {
        rationale.push_str(first.trim_start_matches('*').trim());
        // continuation lines up to a blank line
        for l in &lines[start + 1..] {
            if l.trim().is_empty() || field(l, "behavior:").is_some() {
                break;
            }
            rationale.push('\n');
            rationale.push_str(l.trim());
        }
    }
    (label, rationale.trim().to_string())
}

pub fn parse_completion(raw: &RawCompletion, task: Task) -> Prediction {
    let (label, rationale) = parse_reply(&raw.text, task);
    Prediction {
        sample_id: raw.sample_id.clone(),
        task,
        valid: label.is_valid(),
        label,
        rationale,
        raw_text: raw.text.clone(),
        latency_ms: raw.latency_ms,
        attempts: raw.attempts,
    }
}
