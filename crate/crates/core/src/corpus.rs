//! Session transcripts, annotation records, classification samples,
//! adjudication and agreement statistics.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::stats::{mean, population_std};
use crate::taxonomy::{Label, LabelSpace};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {field}: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    Conflict {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("adjudication needs at least 2 annotations, got {0}")]
    TooFewAnnotations(usize),
    #[error("sequences differ in length ({0} vs {1}) or are empty")]
    Misaligned(usize, usize),
    #[error("chance agreement is 1; kappa is undefined")]
    DegenerateAgreement,
    #[error("history window must be at least 1")]
    InvalidWindow,
    #[error("no scores given")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Counselor,
    Client,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::Counselor => "T",
            Speaker::Client => "C",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllianceScores {
    pub goal: f64,
    pub task: f64,
    pub bond: f64,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alliance: Option<AllianceScores>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Session {
    pub fn client_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(|u| u.speaker == Speaker::Client)
    }

    /// Schema checks beyond what deserialization enforces; `line` is used in
    /// the error.
    pub fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let schema = |field: String, message: &str| CorpusError::Schema {
            line,
            field,
            message: message.to_string(),
        };
        if self.session_id.trim().is_empty() {
            return Err(schema("session_id".into(), "must be non-empty"));
        }
        for (pos, u) in self.utterances.iter().enumerate() {
            if u.index != pos {
                return Err(schema(
                    format!("utterances[{pos}].index"),
                    &format!("expected {pos}, found {}", u.index),
                ));
            }
            if u.text.trim().is_empty() {
                return Err(schema(format!("utterances[{pos}].text"), "must be non-empty"));
            }
        }
        Ok(())
    }
}

/// A speaker-tagged turn inside a sample history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub history: Vec<Turn>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Sample {
    /// The owning session, taken from the `session:index` id convention.
    pub fn session_id(&self) -> &str {
        self.sample_id
            .rsplit_once(':')
            .map(|(s, _)| s)
            .unwrap_or(&self.sample_id)
    }

    pub fn is_well_formed(&self) -> bool {
        self.history.last().map(|t| t.speaker) == Some(Speaker::Counselor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub annotator_id: String,
    pub label: Label,
    #[serde(default)]
    pub rationale: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn parse_line<T: DeserializeOwned>(text: &str, line: usize) -> Result<T, CorpusError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        CorpusError::Schema {
            line,
            field: if field == "." { "<record>".into() } else { field },
            message: err.into_inner().to_string(),
        }
    })
}

/// Reads line-delimited JSON, skipping blank lines. Line numbers are 1-based.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(source: R) -> Result<Vec<(usize, T)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((line_no, parse_line(&line, line_no)?));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: std::io::Write>(mut sink: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_sessions<R: BufRead>(source: R) -> Result<Vec<Session>, CorpusError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut sessions = Vec::new();
    for (line, session) in read_jsonl::<Session, _>(source)? {
        session.validate(line)?;
        if let Some(&first_line) = seen.get(&session.session_id) {
            return Err(CorpusError::Conflict {
                id: session.session_id,
                first_line,
                second_line: line,
            });
        }
        seen.insert(session.session_id.clone(), line);
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn load_annotations<R: BufRead>(source: R) -> Result<Vec<AnnotationRecord>, CorpusError> {
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut out = Vec::new();
    for (line, rec) in read_jsonl::<AnnotationRecord, _>(source)? {
        if !rec.label.in_space(LabelSpace::Annotation) {
            return Err(CorpusError::Schema {
                line,
                field: "label".into(),
                message: format!("{} is not an annotation label", rec.label),
            });
        }
        if rec.label.is_fine() && rec.rationale.trim().is_empty() {
            return Err(CorpusError::Schema {
                line,
                field: "rationale".into(),
                message: "required for resistance labels".into(),
            });
        }
        let key = (rec.sample_id.clone(), rec.annotator_id.clone());
        if let Some(&first_line) = seen.get(&key) {
            return Err(CorpusError::Conflict {
                id: format!("{}/{}", key.0, key.1),
                first_line,
                second_line: line,
            });
        }
        seen.insert(key, line);
        out.push(rec);
    }
    Ok(out)
}

pub fn load_samples<R: BufRead>(source: R) -> Result<Vec<Sample>, CorpusError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (line, sample) in read_jsonl::<Sample, _>(source)? {
        if !sample.is_well_formed() {
            return Err(CorpusError::Schema {
                line,
                field: "history".into(),
                message: "must be non-empty and end with a counselor turn".into(),
            });
        }
        if let Some(&first_line) = seen.get(&sample.sample_id) {
            return Err(CorpusError::Conflict {
                id: sample.sample_id,
                first_line,
                second_line: line,
            });
        }
        seen.insert(sample.sample_id.clone(), line);
        out.push(sample);
    }
    Ok(out)
}

/// How many preceding utterances a sample history may hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistoryWindow {
    /// The whole session prefix.
    #[default]
    Full,
    Turns(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipReport {
    /// `session:index` ids of client turns not preceded by a counselor turn.
    pub skipped: Vec<String>,
}

pub fn build_samples(
    sessions: &[Session],
    window: HistoryWindow,
) -> Result<(Vec<Sample>, SkipReport), CorpusError> {
    if window == HistoryWindow::Turns(0) {
        return Err(CorpusError::InvalidWindow);
    }
    let mut samples = Vec::new();
    let mut report = SkipReport::default();
    for session in sessions {
        for (i, u) in session.utterances.iter().enumerate() {
            if u.speaker != Speaker::Client {
                continue;
            }
            let id = format!("{}:{}", session.session_id, u.index);
            if i == 0 || session.utterances[i - 1].speaker != Speaker::Counselor {
                report.skipped.push(id);
                continue;
            }
            let start = match window {
                HistoryWindow::Full => 0,
                HistoryWindow::Turns(n) => i.saturating_sub(n),
            };
            let history = session.utterances[start..i]
                .iter()
                .map(|u| Turn {
                    speaker: u.speaker,
                    text: u.text.clone(),
                })
                .collect();
            samples.push(Sample {
                sample_id: id,
                history,
                response: u.text.clone(),
                gold: None,
                rationale: None,
                extra: Map::new(),
            });
        }
    }
    Ok((samples, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "label")]
pub enum Verdict {
    Final(Label),
    NeedsMoreAnnotations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub verdict: Verdict,
    pub votes: BTreeMap<Label, usize>,
}

impl Adjudication {
    /// Rationale of the first annotator who chose the final label.
    pub fn rationale<'a>(&self, annotations: &'a [AnnotationRecord]) -> Option<&'a str> {
        let Verdict::Final(label) = self.verdict else {
            return None;
        };
        annotations
            .iter()
            .find(|a| a.label == label && !a.rationale.is_empty())
            .map(|a| a.rationale.as_str())
    }
}

/// Strict-majority vote over one sample's annotations.
pub fn adjudicate(annotations: &[AnnotationRecord]) -> Result<Adjudication, CorpusError> {
    if annotations.len() < 2 {
        return Err(CorpusError::TooFewAnnotations(annotations.len()));
    }
    let mut votes: BTreeMap<Label, usize> = BTreeMap::new();
    for a in annotations {
        *votes.entry(a.label).or_default() += 1;
    }
    let total = annotations.len();
    let verdict = votes
        .iter()
        .find(|(_, &n)| 2 * n > total)
        .map(|(&l, _)| Verdict::Final(l))
        .unwrap_or(Verdict::NeedsMoreAnnotations);
    Ok(Adjudication { verdict, votes })
}

/// Groups annotations by sample id, keeping first-seen order.
pub fn group_annotations(annotations: &[AnnotationRecord]) -> Vec<(String, Vec<AnnotationRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<AnnotationRecord>> = HashMap::new();
    for a in annotations {
        groups
            .entry(a.sample_id.clone())
            .or_insert_with(|| {
                order.push(a.sample_id.clone());
                Vec::new()
            })
            .push(a.clone());
    }
    order
        .into_iter()
        .map(|id| {
            let g = groups.remove(&id).unwrap_or_default();
            (id, g)
        })
        .collect()
}

/// Attaches adjudicated gold labels and rationales to samples; samples
/// without a final verdict keep `gold = None`.
pub fn attach_gold(samples: &mut [Sample], annotations: &[AnnotationRecord]) -> Vec<(String, Adjudication)> {
    let grouped = group_annotations(annotations);
    let mut results = Vec::new();
    let by_id: HashMap<&str, &Vec<AnnotationRecord>> =
        grouped.iter().map(|(id, g)| (id.as_str(), g)).collect();
    for s in samples.iter_mut() {
        let Some(group) = by_id.get(s.sample_id.as_str()) else {
            continue;
        };
        let Ok(adj) = adjudicate(group) else {
            continue;
        };
        if let Verdict::Final(label) = adj.verdict {
            s.gold = Some(label);
            s.rationale = adj.rationale(group).map(String::from);
        }
        results.push((s.sample_id.clone(), adj));
    }
    results
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport<L: Ord> {
    pub overall_kappa: f64,
    pub observed_agreement: f64,
    pub chance_agreement: f64,
    /// One-vs-rest kappa; `None` where that binarization is degenerate.
    pub per_category_kappa: BTreeMap<L, Option<f64>>,
    pub item_count: usize,
}

fn kappa_from_rates(p_o: f64, p_e: f64) -> Option<f64> {
    if (1.0 - p_e).abs() < 1e-15 {
        None
    } else {
        Some((p_o - p_e) / (1.0 - p_e))
    }
}

fn agreement_rates<L: PartialEq>(a: &[L], b: &[L], space: &[L]) -> (f64, f64) {
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let p_e = space
        .iter()
        .map(|k| {
            let pa = a.iter().filter(|x| *x == k).count() as f64 / n;
            let pb = b.iter().filter(|x| *x == k).count() as f64 / n;
            pa * pb
        })
        .sum();
    (p_o, p_e)
}

pub fn cohen_kappa<L: Ord + Clone>(a: &[L], b: &[L], label_space: &[L]) -> Result<KappaReport<L>, CorpusError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CorpusError::Misaligned(a.len(), b.len()));
    }
    let (p_o, p_e) = agreement_rates(a, b, label_space);
    let overall = kappa_from_rates(p_o, p_e).ok_or(CorpusError::DegenerateAgreement)?;
    let per_category = label_space
        .iter()
        .map(|k| {
            let ba: Vec<bool> = a.iter().map(|x| x == k).collect();
            let bb: Vec<bool> = b.iter().map(|x| x == k).collect();
            let (po, pe) = agreement_rates(&ba, &bb, &[true, false]);
            (k.clone(), kappa_from_rates(po, pe))
        })
        .collect();
    Ok(KappaReport {
        overall_kappa: overall,
        observed_agreement: p_o,
        chance_agreement: p_e,
        per_category_kappa: per_category,
        item_count: a.len(),
    })
}

/// Pairs the first two annotations of every sample as raters A and B.
pub fn annotator_pairs(annotations: &[AnnotationRecord]) -> (Vec<Label>, Vec<Label>) {
    group_annotations(annotations)
        .into_iter()
        .filter(|(_, g)| g.len() >= 2)
        .map(|(_, g)| (g[0].label, g[1].label))
        .unzip()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStat {
    pub count: usize,
    /// Mean response length in unicode scalar values.
    pub avg_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_label: BTreeMap<Label, LabelStat>,
    pub resistance: LabelStat,
    pub collaboration: LabelStat,
    pub total: LabelStat,
}

fn label_stat(lengths: &[usize]) -> LabelStat {
    if lengths.is_empty() {
        return LabelStat::default();
    }
    LabelStat {
        count: lengths.len(),
        avg_len: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
    }
}

/// Table of counts and mean response lengths; samples without gold are ignored.
pub fn corpus_stats(samples: &[Sample]) -> CorpusStats {
    let mut lengths: BTreeMap<Label, Vec<usize>> = Label::ANNOTATION.iter().map(|&l| (l, Vec::new())).collect();
    for s in samples {
        if let Some(gold) = s.gold {
            lengths.entry(gold).or_default().push(s.response.chars().count());
        }
    }
    let resistance: Vec<usize> = Label::FINE.iter().flat_map(|l| lengths[l].iter().copied()).collect();
    let collaboration = lengths[&Label::Collaboration].clone();
    let all: Vec<usize> = resistance.iter().chain(collaboration.iter()).copied().collect();
    CorpusStats {
        per_label: lengths.iter().map(|(l, v)| (*l, label_stat(v))).collect(),
        resistance: label_stat(&resistance),
        collaboration: label_stat(&collaboration),
        total: label_stat(&all),
    }
}

impl CorpusStats {
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<16}{:>8}{:>10}\n", "Category", "Num", "Avg.Len");
        for label in Label::FINE {
            let s = self.per_label[&label];
            out.push_str(&format!("{:<16}{:>8}{:>10.2}\n", label.name(), s.count, s.avg_len));
        }
        for (name, s) in [
            ("Resistance", self.resistance),
            ("Collaboration", self.collaboration),
            ("Total", self.total),
        ] {
            out.push_str(&format!("{:<16}{:>8}{:>10.2}\n", name, s.count, s.avg_len));
        }
        out
    }
}

/// Mean and population standard deviation of exam scores.
pub fn exam_summary(scores: &[f64]) -> Result<(f64, f64), CorpusError> {
    if scores.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok((mean(scores), population_std(scores)))
}

pub mod synthetic {
    //! Seeded synthetic corpora for tests and demos.

    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const COUNSELOR_LINES: [&str; 6] = [
        "Perhaps you could try talking to her when things are calm.",
        "How did that make you feel at the time?",
        "It sounds like you have been carrying a lot lately.",
        "What would a small first step look like for you?",
        "Could we look at this from a slightly different angle?",
        "Would you be open to trying a breathing exercise this week?",
    ];

    /// Example client responses showing `label`.
    pub fn client_lines(label: Label) -> &'static [&'static str] {
        match label {
            Label::Challenging => &["Do you really believe that is even possible?", "Is that actually true though?"],
            Label::Discounting => &["Is that the only trick you therapists have?", "You clearly don't get what I'm going through."],
            Label::Blaming => &["It's my husband who needs to change, not me.", "My parents are the ones causing all of this."],
            Label::Disagreeing => &["I think this approach might not work for me.", "No, it'll just end up in an argument."],
            Label::Excusing => &["I've been too busy with work to try anything.", "My schedule just doesn't allow it right now."],
            Label::Minimizing => &["It's not as serious as you're making it out to be.", "Honestly it's fine, nothing much."],
            Label::Pessimism => &["My life isn't going to get any better anyway.", "I'm just not good enough for this."],
            Label::Reluctance => &["I understand, but I need to think it over.", "Perhaps, it just feels so difficult."],
            Label::Unwillingness => &["I just don't wanna change anything.", "Forget it, I don't want to try that."],
            Label::MinimumTalk => &["Okay...", "Nothing special."],
            Label::LimitSetting => &["Can we not talk about this today?", "I don't really want to answer that for now."],
            Label::Sidetracking => &["Speaking of that, my sister called yesterday.", "By the way, my teacher said something odd."],
            Label::Inattention => &["He also said some very hurtful things to me.", "And the children keep fighting at home."],
            Label::Collaboration | Label::Resistance => &[
                "Yes, I could try that this weekend.",
                "That makes sense, I'd like to understand it better.",
                "I think talking calmly would help us both.",
            ],
        }
    }

    fn client_line(label: Label, rng: &mut ChaCha8Rng) -> String {
        let options = client_lines(label);
        options[rng.gen_range(0..options.len())].to_string()
    }

    /// Sessions alternating counselor/client turns, with annotation records
    /// from a pool of annotators (two per sample, a third on disagreement).
    pub fn generate(
        session_count: usize,
        turns_per_session: usize,
        seed: u64,
    ) -> (Vec<Session>, Vec<AnnotationRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let annotators = ["a1", "a2", "a3", "a4"];
        let mut sessions = Vec::new();
        let mut annotations = Vec::new();
        for s in 0..session_count {
            let session_id = format!("s{s:03}");
            let mut utterances = Vec::new();
            let mut resistant = 0usize;
            for t in 0..turns_per_session {
                let idx = 2 * t;
                utterances.push(Utterance {
                    index: idx,
                    speaker: Speaker::Counselor,
                    text: COUNSELOR_LINES[rng.gen_range(0..COUNSELOR_LINES.len())].to_string(),
                    extra: Map::new(),
                });
                let label = if rng.gen_bool(0.45) {
                    Label::FINE[rng.gen_range(0..Label::FINE.len())]
                } else {
                    Label::Collaboration
                };
                if label.is_fine() {
                    resistant += 1;
                }
                utterances.push(Utterance {
                    index: idx + 1,
                    speaker: Speaker::Client,
                    text: client_line(label, &mut rng),
                    extra: Map::new(),
                });
                let sample_id = format!("{session_id}:{}", idx + 1);
                let mut pair: Vec<&str> = annotators.choose_multiple(&mut rng, 3).copied().collect();
                let disagree = rng.gen_bool(0.15);
                let third = pair.pop().unwrap_or("a4");
                for (k, annotator) in pair.iter().enumerate() {
                    let l = if disagree && k == 1 {
                        Label::ANNOTATION[rng.gen_range(0..Label::ANNOTATION.len())]
                    } else {
                        label
                    };
                    annotations.push(record(&sample_id, annotator, l));
                }
                if disagree {
                    annotations.push(record(&sample_id, third, label));
                }
            }
            let rate = resistant as f64 / turns_per_session.max(1) as f64;
            let alliance = AllianceScores {
                goal: 5.0 - 2.0 * rate + rng.gen_range(-0.3..0.3),
                task: 5.0 - 1.5 * rate + rng.gen_range(-0.3..0.3),
                bond: 5.0 - 1.8 * rate + rng.gen_range(-0.3..0.3),
                overall: 5.0 - 2.0 * rate + rng.gen_range(-0.2..0.2),
            };
            sessions.push(Session {
                session_id,
                utterances,
                alliance: Some(alliance),
                extra: Map::new(),
            });
        }
        (sessions, annotations)
    }

    fn record(sample_id: &str, annotator: &str, label: Label) -> AnnotationRecord {
        AnnotationRecord {
            sample_id: sample_id.to_string(),
            annotator_id: annotator.to_string(),
            label,
            rationale: format!("Annotated as {} given the counselor's preceding turn.", label.name()),
            extra: Map::new(),
        }
    }

    /// Samples with the given per-label counts, responses of fixed length.
    pub fn samples_with_counts(counts: &[(Label, usize)], response_len: usize) -> Vec<Sample> {
        let mut out = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                out.push(Sample {
                    sample_id: format!("{}:{i}", label.name().replace(' ', "_")),
                    history: vec![Turn {
                        speaker: Speaker::Counselor,
                        text: "How are you?".into(),
                    }],
                    response: "x".repeat(response_len),
                    gold: Some(*label),
                    rationale: None,
                    extra: Map::new(),
                });
            }
        }
        out
    }
}
