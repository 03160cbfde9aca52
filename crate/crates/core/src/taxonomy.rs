//! Client-resistance label space.
//!
//! Thirteen fine-grained resistance behaviors grouped into four coarse
//! patterns, plus `Collaboration`. `Resistance` exists as a label only for the
//! binary task; annotators never assign it directly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("unknown label {raw:?}")]
    UnknownLabel { raw: String },
    #[error("{0} has no coarse pattern")]
    NoCoarsePattern(Label),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Challenging,
    Discounting,
    Blaming,
    Disagreeing,
    Excusing,
    Minimizing,
    Pessimism,
    Reluctance,
    Unwillingness,
    MinimumTalk,
    LimitSetting,
    Sidetracking,
    Inattention,
    Collaboration,
    /// Binary-task aggregate of every fine category.
    Resistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoarsePattern {
    Arguing,
    Denying,
    Avoidance,
    Ignoring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Fine,
}

/// Which labels a string is allowed to resolve to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSpace {
    /// `Resistance` and `Collaboration`.
    Binary,
    /// The 13 fine resistance categories.
    Fine,
    /// What an annotator may assign: 13 fine categories and `Collaboration`.
    Annotation,
}

impl From<Task> for LabelSpace {
    fn from(task: Task) -> Self {
        match task {
            Task::Binary => LabelSpace::Binary,
            Task::Fine => LabelSpace::Fine,
        }
    }
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Fine => "fine",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(Task::Binary),
            "fine" => Ok(Task::Fine),
            other => Err(format!("unknown task {other:?} (expected binary or fine)")),
        }
    }
}

impl Label {
    /// Fine categories in the order of the taxonomy table.
    pub const FINE: [Label; 13] = [
        Label::Challenging,
        Label::Discounting,
        Label::Blaming,
        Label::Disagreeing,
        Label::Excusing,
        Label::Minimizing,
        Label::Pessimism,
        Label::Reluctance,
        Label::Unwillingness,
        Label::MinimumTalk,
        Label::LimitSetting,
        Label::Sidetracking,
        Label::Inattention,
    ];

    pub const BINARY: [Label; 2] = [Label::Resistance, Label::Collaboration];

    /// Every label an annotator can assign.
    pub const ANNOTATION: [Label; 14] = [
        Label::Challenging,
        Label::Discounting,
        Label::Blaming,
        Label::Disagreeing,
        Label::Excusing,
        Label::Minimizing,
        Label::Pessimism,
        Label::Reluctance,
        Label::Unwillingness,
        Label::MinimumTalk,
        Label::LimitSetting,
        Label::Sidetracking,
        Label::Inattention,
        Label::Collaboration,
    ];

    pub fn is_fine(self) -> bool {
        !matches!(self, Label::Collaboration | Label::Resistance)
    }

    /// Canonical display name.
    pub fn name(self) -> &'static str {
        match self {
            Label::Challenging => "Challenging",
            Label::Discounting => "Discounting",
            Label::Blaming => "Blaming",
            Label::Disagreeing => "Disagreeing",
            Label::Excusing => "Excusing",
            Label::Minimizing => "Minimizing",
            Label::Pessimism => "Pessimism",
            Label::Reluctance => "Reluctance",
            Label::Unwillingness => "Unwillingness",
            Label::MinimumTalk => "Minimum Talk",
            Label::LimitSetting => "Limit Setting",
            Label::Sidetracking => "Sidetracking",
            Label::Inattention => "Inattention",
            Label::Collaboration => "Collaboration",
            Label::Resistance => "Resistance",
        }
    }

    /// The string a model is asked to answer with.
    pub fn prompt_string(self) -> &'static str {
        match self {
            Label::Challenging => "Arguing - Challenging",
            Label::Discounting => "Arguing - Discounting",
            Label::Blaming => "Denying - Blaming",
            Label::Disagreeing => "Denying - Disagreeing",
            Label::Excusing => "Denying - Excusing",
            Label::Minimizing => "Denying - Minimizing",
            Label::Pessimism => "Denying - Pessimism",
            Label::Reluctance => "Denying - Reluctance",
            Label::Unwillingness => "Denying - Unwillingness",
            Label::MinimumTalk => "Avoidance - Minimum Talk",
            Label::LimitSetting => "Avoidance - Limit Setting",
            Label::Sidetracking => "Ignoring - Sidetracking",
            Label::Inattention => "Ignoring - Inattention",
            Label::Collaboration => "Cooperation",
            Label::Resistance => "Resistance",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            Label::Challenging => "The client directly questions the accuracy or truthfulness of the information or content provided by the counselor.",
            Label::Discounting => "The client questions the counselor's personal abilities, professional knowledge, or role in the counseling process.",
            Label::Blaming => "The client expresses resistance by deflecting responsibility and attributing the issue to others, thus refusing to align with the counselor's approach, particularly when the counselor offers suggestions for change.",
            Label::Disagreeing => "When the counselor employs directive strategies\u{2014}such as encouraging reflection, helping the client view the problem from a new perspective, suggesting possible solutions, or offering direct advice\u{2014}the client demonstrates resistance by expressing disagreement without offering any constructive alternatives.",
            Label::Excusing => "The client conveys their inability to follow the counselor's guidance by offering excuses for their behavior and attributing the issue to external, objective factors.",
            Label::Minimizing => "The client implies that the counselor has exaggerated the risks or dangers, downplaying the situation as less severe than suggested, and conveying that their issues are not serious enough to warrant the counselor's guidance or assistance.",
            Label::Pessimism => "The client expresses pessimistic, defeatist, or negative views about themselves, signaling their inability to follow the counselor's suggested course of action.",
            Label::Reluctance => "The client shows hesitation or expresses reservations toward the information or suggestions offered by the counselor.",
            Label::Unwillingness => "The client expresses contentment with the current situation and shows a lack of willingness to change, or conveys a resistance to making any changes.",
            Label::MinimumTalk => "The client withholds information, providing brief and superficial responses that lack depth and sufficient detail, often conveying a dismissive attitude.",
            Label::LimitSetting => "The client explicitly refuses or sidesteps discussing certain topics, often providing alternative reasons for doing so.",
            Label::Sidetracking => "The client shifts the conversation away from the counselor's intended focus, introducing new topics or areas of attention.",
            Label::Inattention => "The client remains fixated on their previously chosen topic, deeply immersed in the original subject or emotions, disregarding the counselor's attempts to intervene.",
            Label::Collaboration => "The client aligns with the counselor's direction and engages in the counseling process without resistance.",
            Label::Resistance => "The client opposes or disengages from the counselor's intervention through arguing, denying, avoiding, or ignoring.",
        }
    }

    /// Collapses a fine label to the binary label space.
    pub fn to_binary(self) -> Label {
        match self {
            Label::Collaboration => Label::Collaboration,
            _ => Label::Resistance,
        }
    }

    pub fn in_space(self, space: LabelSpace) -> bool {
        match space {
            LabelSpace::Binary => matches!(self, Label::Resistance | Label::Collaboration),
            LabelSpace::Fine => self.is_fine(),
            LabelSpace::Annotation => self != Label::Resistance,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = TaxonomyError;

    /// Resolves against every label, including `Resistance`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AliasTable::global().resolve_any(s)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

impl CoarsePattern {
    pub const ALL: [CoarsePattern; 4] = [
        CoarsePattern::Arguing,
        CoarsePattern::Denying,
        CoarsePattern::Avoidance,
        CoarsePattern::Ignoring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoarsePattern::Arguing => "Arguing",
            CoarsePattern::Denying => "Denying",
            CoarsePattern::Avoidance => "Avoidance",
            CoarsePattern::Ignoring => "Ignoring",
        }
    }

    pub fn members(self) -> &'static [Label] {
        match self {
            CoarsePattern::Arguing => &Label::FINE[0..2],
            CoarsePattern::Denying => &Label::FINE[2..9],
            CoarsePattern::Avoidance => &Label::FINE[9..11],
            CoarsePattern::Ignoring => &Label::FINE[11..13],
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            CoarsePattern::Arguing => "The client challenges the counselor's professionalism or integrity, questions their qualifications or experience, expresses skepticism about the appropriateness of their interventions, or conveys dissatisfaction by implying that the counselor does not truly understand their situation.",
            CoarsePattern::Denying => "The client expresses unwillingness or inability to recognize problems, cooperate, accept responsibility, or take advice.",
            CoarsePattern::Avoidance => "The client provides brief responses or withholds replies to minimize communication with the counselor on the current topic, thereby avoiding deeper self-exploration and problem-solving.",
            CoarsePattern::Ignoring => "The client shows signs of neglect or non-compliance with the counselor's guidance. The client's responses often suggest that they have not followed the counselor's approaches. It may appear as though the client has completely disregarded the counselor's words or is acting as if the counselor's statements or questions were never made.",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            CoarsePattern::Avoidance => &["Avoidance", "Avoiding"],
            CoarsePattern::Arguing => &["Arguing"],
            CoarsePattern::Denying => &["Denying"],
            CoarsePattern::Ignoring => &["Ignoring"],
        }
    }
}

impl fmt::Display for CoarsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A model prediction: a label or an unparseable reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PredictedLabel {
    Label(Label),
    Invalid,
}

impl PredictedLabel {
    pub fn label(self) -> Option<Label> {
        match self {
            PredictedLabel::Label(l) => Some(l),
            PredictedLabel::Invalid => None,
        }
    }

    pub fn is_valid(self) -> bool {
        matches!(self, PredictedLabel::Label(_))
    }

    pub fn to_binary(self) -> PredictedLabel {
        match self {
            PredictedLabel::Label(l) => PredictedLabel::Label(l.to_binary()),
            PredictedLabel::Invalid => PredictedLabel::Invalid,
        }
    }
}

impl From<Label> for PredictedLabel {
    fn from(label: Label) -> Self {
        PredictedLabel::Label(label)
    }
}

impl fmt::Display for PredictedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictedLabel::Label(l) => f.write_str(l.name()),
            PredictedLabel::Invalid => f.write_str("Invalid"),
        }
    }
}

impl Serialize for PredictedLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PredictedLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        if raw == "Invalid" {
            return Ok(PredictedLabel::Invalid);
        }
        raw.parse::<Label>().map(PredictedLabel::Label).map_err(serde::de::Error::custom)
    }
}

pub fn canonical_labels(task: Task) -> &'static [Label] {
    match task {
        Task::Binary => &Label::BINARY,
        Task::Fine => &Label::FINE,
    }
}

pub fn coarse_of(label: Label) -> Result<CoarsePattern, TaxonomyError> {
    CoarsePattern::ALL
        .into_iter()
        .find(|p| p.members().contains(&label))
        .ok_or(TaxonomyError::NoCoarsePattern(label))
}

pub fn normalize_label(raw: &str, task: Task) -> Result<Label, TaxonomyError> {
    AliasTable::global().resolve(raw, task.into())
}

/// Case-folds, trims and collapses internal whitespace.
pub fn canonicalize(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Surface strings mapped to labels, keyed by their canonicalized form.
#[derive(Debug, Clone)]
pub struct AliasTable {
    entries: BTreeMap<String, Label>,
    prefixes: Vec<(String, CoarsePattern)>,
}

impl AliasTable {
    pub fn builtin() -> Self {
        let mut table = AliasTable {
            entries: BTreeMap::new(),
            prefixes: Vec::new(),
        };
        for label in Label::ANNOTATION.iter().copied().chain([Label::Resistance]) {
            table.insert(label.name(), label);
            table.insert(label.prompt_string(), label);
        }
        let extra: [(&str, Label); 7] = [
            ("Minimal Talk", Label::MinimumTalk),
            ("Avoiding - Minimal Talk", Label::MinimumTalk),
            ("Avoiding - Limit Setting", Label::LimitSetting),
            ("Pessimistic", Label::Pessimism),
            ("Cooperation", Label::Collaboration),
            ("Collaboration", Label::Collaboration),
            ("Resistance", Label::Resistance),
        ];
        for (alias, label) in extra {
            table.insert(alias, label);
        }
        for pattern in CoarsePattern::ALL {
            for alias in pattern.aliases() {
                table.prefixes.push((canonicalize(alias), pattern));
            }
        }
        table
    }

    /// Shared built-in table.
    pub fn global() -> &'static AliasTable {
        static TABLE: OnceLock<AliasTable> = OnceLock::new();
        TABLE.get_or_init(AliasTable::builtin)
    }

    pub fn insert(&mut self, alias: &str, label: Label) {
        self.entries.insert(canonicalize(alias), label);
    }

    pub fn aliases_of(&self, label: Label) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, l)| **l == label)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    fn lookup(&self, key: &str) -> Option<Label> {
        if let Some(l) = self.entries.get(key) {
            return Some(*l);
        }
        // "denying - pessimism" style: strip the coarse prefix and retry.
        let (head, tail) = key
            .split_once(" - ")
            .or_else(|| key.split_once(" \u{2013} "))
            .or_else(|| key.split_once('-'))?;
        let (_, pattern) = self.prefixes.iter().find(|(p, _)| p == head.trim())?;
        // The prefix must agree with the label it qualifies.
        let label = self.entries.get(tail.trim()).copied()?;
        (coarse_of(label).ok() == Some(*pattern)).then_some(label)
    }

    fn resolve_any(&self, raw: &str) -> Result<Label, TaxonomyError> {
        self.lookup(&canonicalize(raw))
            .ok_or_else(|| TaxonomyError::UnknownLabel { raw: raw.to_string() })
    }

    pub fn resolve(&self, raw: &str, space: LabelSpace) -> Result<Label, TaxonomyError> {
        match self.resolve_any(raw) {
            Ok(label) if label.in_space(space) => Ok(label),
            _ => Err(TaxonomyError::UnknownLabel { raw: raw.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaxonomyEntry {
    pub label: String,
    pub coarse_pattern: Option<String>,
    pub prompt_string: String,
    pub definition: String,
    pub aliases: Vec<String>,
}

/// Machine-readable export of the label space for UIs and docs.
pub fn taxonomy_document() -> Vec<TaxonomyEntry> {
    let table = AliasTable::global();
    Label::ANNOTATION
        .iter()
        .map(|&label| TaxonomyEntry {
            label: label.name().to_string(),
            coarse_pattern: coarse_of(label).ok().map(|p| p.name().to_string()),
            prompt_string: label.prompt_string().to_string(),
            definition: label.definition().to_string(),
            aliases: table.aliases_of(label).into_iter().map(String::from).collect(),
        })
        .collect()
}
