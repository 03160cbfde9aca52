//! Zero-/few-shot prompt construction for the binary and fine-grained tasks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sample, Turn};
use crate::taxonomy::{canonical_labels, CoarsePattern, Label, Task};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no training sample labeled {0}")]
    Coverage(String),
    #[error("few-shot prompt needs one exemplar per label; missing {0}")]
    IncompleteExemplars(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotMode {
    Zero,
    Few,
}

impl std::str::FromStr for ShotMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zero" | "0" => Ok(ShotMode::Zero),
            "few" | "1" | "one" => Ok(ShotMode::Few),
            other => Err(format!("unknown shot mode {other:?} (expected zero or few)")),
        }
    }
}

impl ShotMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ShotMode::Zero => "zero",
            ShotMode::Few => "few",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub sample: Sample,
    pub label: Label,
    pub rationale: String,
}

/// One demonstration per task label, drawn from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub task: Task,
    pub seed: u64,
    pub exemplars: BTreeMap<Label, Exemplar>,
}

/// Gold label of a sample as seen by the task (fine labels collapse for binary).
pub fn task_label(gold: Label, task: Task) -> Option<Label> {
    match task {
        Task::Binary => Some(gold.to_binary()),
        Task::Fine => gold.is_fine().then_some(gold),
    }
}

pub fn sample_exemplars(training: &[Sample], task: Task, seed: u64) -> Result<ExemplarSet, PromptError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exemplars = BTreeMap::new();
    for &label in canonical_labels(task) {
        let pool: Vec<&Sample> = training
            .iter()
            .filter(|s| s.gold.and_then(|g| task_label(g, task)) == Some(label))
            .collect();
        if pool.is_empty() {
            return Err(PromptError::Coverage(label.name().to_string()));
        }
        let chosen = pool[rng.gen_range(0..pool.len())];
        exemplars.insert(
            label,
            Exemplar {
                sample: chosen.clone(),
                label,
                rationale: chosen.rationale.clone().unwrap_or_default(),
            },
        );
    }
    Ok(ExemplarSet { task, seed, exemplars })
}

/// Translatable prompt text. The English defaults are the published templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub role_header: String,
    pub binary_role: String,
    pub fine_role: String,
    pub task_header: String,
    pub binary_task: String,
    pub fine_task: String,
    pub taxonomy_header: String,
    pub binary_collaboration_entry: String,
    pub examples_header: String,
    pub dialogue_header: String,
    pub context_label: String,
    pub response_label: String,
    pub output_header: String,
    pub output_instruction: String,
    pub output_choice_intro: String,
    pub behavior_prefix: String,
    pub reason_prefix: String,
    pub counselor_tag: String,
    pub client_tag: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::english()
    }
}

impl PromptTemplates {
    pub fn english() -> Self {
        let task_common = "You will be provided with a snippet of a psychological counseling dialogue between a counselor and a client, including contextual exchanges and a specific client response, as well as a taxonomy of client";
        let decide = "Please carefully read the context and determine the *single most appropriate behavior category* for the client's response based on the provided taxonomy.";
        PromptTemplates {
            role_header: "Role:".into(),
            binary_role: "You are a highly professional psychological counselor. You are able to sensitively distinguish client resistance behaviors from collaboration during counseling sessions.".into(),
            fine_role: "You are a highly professional psychological counselor. You are able to sensitively detect resistant behaviors exhibited by clients during counseling sessions and accurately categorize these behaviors.".into(),
            task_header: "Task:".into(),
            binary_task: format!("{task_common} resistance and collaboration behaviors.\n{decide}"),
            fine_task: format!("{task_common} resistance behaviors.\n{decide}"),
            taxonomy_header: "Resistance Taxonomy".into(),
            binary_collaboration_entry: "2. Cooperation: The client aligns with the counselor's direction and engages in the counseling process without resistance.".into(),
            examples_header: "Examples:".into(),
            dialogue_header: "Counseling Dialogue:".into(),
            context_label: "Context:".into(),
            response_label: "Client Response:".into(),
            output_header: "Output Format".into(),
            output_instruction: "Please provide two lines in the following format: Line 1 starts with \"Behavior:\" followed by the predicted category; Line 2 starts with \"Reason:\" followed by a brief justification for the choice.".into(),
            output_choice_intro: "The behavior must be one of the following:".into(),
            behavior_prefix: "Behavior:".into(),
            reason_prefix: "Reason:".into(),
            counselor_tag: "T:".into(),
            client_tag: "C:".into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone)]
pub struct PromptSpec<'a> {
    pub task: Task,
    pub shot_mode: ShotMode,
    pub exemplars: Option<&'a ExemplarSet>,
    pub sample: &'a Sample,
}

/// A built prompt: the role block goes out as the system message, the rest as
/// the user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// Definition-block spelling of a coarse pattern.
fn coarse_heading(p: CoarsePattern) -> &'static str {
    match p {
        CoarsePattern::Avoidance => "Avoiding",
        other => other.name(),
    }
}

/// Definition-block spelling of a fine label.
fn definition_name(l: Label) -> &'static str {
    match l {
        Label::MinimumTalk => "Minimal Talk",
        other => other.name(),
    }
}

/// Order in which the published templates list the fine categories.
const TEMPLATE_ORDER: [Label; 13] = [
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
    Label::Inattention,
    Label::Sidetracking,
];

fn template_members(p: CoarsePattern) -> impl Iterator<Item = Label> {
    TEMPLATE_ORDER.into_iter().filter(move |l| p.members().contains(l))
}

/// Label strings the model may answer with, in template order.
pub fn permitted_label_strings(task: Task) -> Vec<&'static str> {
    match task {
        Task::Binary => vec![Label::Resistance.prompt_string(), Label::Collaboration.prompt_string()],
        Task::Fine => TEMPLATE_ORDER.iter().map(|l| l.prompt_string()).collect(),
    }
}

fn taxonomy_block(task: Task, t: &PromptTemplates) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", t.taxonomy_header);
    out.push('\n');
    if task == Task::Binary {
        out.push_str("1. Resistance:\n\n");
    }
    for (i, pattern) in CoarsePattern::ALL.into_iter().enumerate() {
        let number = match task {
            Task::Binary => format!("1.{}", i + 1),
            Task::Fine => format!("{}.", i + 1),
        };
        let _ = writeln!(out, "{number} {}: {}", coarse_heading(pattern), pattern.definition());
        out.push('\n');
        for label in template_members(pattern) {
            let _ = writeln!(
                out,
                "{} - {}: {}",
                coarse_heading(pattern),
                definition_name(label),
                label.definition()
            );
            out.push('\n');
        }
    }
    if task == Task::Binary {
        let _ = writeln!(out, "{}", t.binary_collaboration_entry);
        out.push('\n');
    }
    out
}

fn render_dialogue(history: &[Turn], response: &str, t: &PromptTemplates) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", t.context_label);
    for turn in history {
        let tag = match turn.speaker {
            crate::corpus::Speaker::Counselor => &t.counselor_tag,
            crate::corpus::Speaker::Client => &t.client_tag,
        };
        let _ = writeln!(out, "{tag} {}", turn.text.trim());
    }
    let _ = writeln!(out, "{} {}", t.response_label, response.trim());
    out
}

fn output_block(task: Task, t: &PromptTemplates) -> String {
    let quoted: Vec<String> = permitted_label_strings(task)
        .into_iter()
        .map(|s| format!("\"{s}\""))
        .collect();
    let choices = match quoted.as_slice() {
        [a, b] => format!("{a} or {b}."),
        [init @ .., last] => format!("{}, or {last}.", init.join(", ")),
        [] => String::new(),
    };
    format!(
        "{}\n\n{}\n\n{}\n{}\n",
        t.output_header, t.output_instruction, t.output_choice_intro, choices
    )
}

/// Formats a reply in the required two-line format.
pub fn render_reply(label: Label, rationale: &str, t: &PromptTemplates) -> String {
    format!("{} {}\n{} {}", t.behavior_prefix, label.prompt_string(), t.reason_prefix, rationale)
}

pub fn build_prompt(spec: &PromptSpec<'_>) -> Result<Prompt, PromptError> {
    build_prompt_with(spec, &PromptTemplates::english())
}

pub fn build_prompt_with(spec: &PromptSpec<'_>, t: &PromptTemplates) -> Result<Prompt, PromptError> {
    let task = spec.task;
    let (role, task_text) = match task {
        Task::Binary => (&t.binary_role, &t.binary_task),
        Task::Fine => (&t.fine_role, &t.fine_task),
    };
    let system = format!("{}\n{}", t.role_header, role);

    let mut user = format!("{}\n{}\n\n", t.task_header, task_text);
    user.push_str(&taxonomy_block(task, t));

    if spec.shot_mode == ShotMode::Few {
        let set = spec
            .exemplars
            .ok_or_else(|| PromptError::IncompleteExemplars("all labels".into()))?;
        let _ = writeln!(user, "{}", t.examples_header);
        user.push('\n');
        for &label in canonical_labels(task) {
            let ex = set
                .exemplars
                .get(&label)
                .ok_or_else(|| PromptError::IncompleteExemplars(label.name().into()))?;
            user.push_str(&render_dialogue(&ex.sample.history, &ex.sample.response, t));
            let _ = writeln!(user, "{}", render_reply(label, ex.rationale.trim(), t));
            user.push('\n');
        }
    }

    let _ = writeln!(user, "{}", t.dialogue_header);
    user.push('\n');
    user.push_str(&render_dialogue(&spec.sample.history, &spec.sample.response, t));
    user.push('\n');
    user.push_str(&output_block(task, t));
    Ok(Prompt { system, user })
}

/// Fine-tuning configuration for an external trainer, as `key=value` lines.
pub fn emit_train_config(task: Task) -> String {
    let entries: [(&str, String); 11] = [
        ("task", task.as_str().to_string()),
        ("per_device_train_batch_size", "4".into()),
        ("gradient_accumulation_steps", "4".into()),
        ("learning_rate", "5.0e-7".into()),
        ("num_train_epochs", "10".into()),
        ("lr_scheduler_type", "cosine".into()),
        ("warmup_ratio", "0.1".into()),
        ("optimizer", "AdamW".into()),
        ("train_dataset_path", format!("<{}-train-fold-path>", task.as_str())),
        ("eval_dataset_path", format!("<{}-eval-fold-path>", task.as_str())),
        ("output_dir", "<output-dir>".into()),
    ];
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Speaker;
    use serde_json::Map;

    fn sample(id: &str, gold: Label) -> Sample {
        Sample {
            sample_id: id.into(),
            history: vec![
                Turn { speaker: Speaker::Client, text: "We argue all the time.".into() },
                Turn { speaker: Speaker::Counselor, text: "Perhaps pick a calm moment to talk.".into() },
            ],
            response: format!("response for {id}"),
            gold: Some(gold),
            rationale: Some(format!("rationale for {id}")),
            extra: Map::new(),
        }
    }

    fn training() -> Vec<Sample> {
        Label::ANNOTATION
            .iter()
            .flat_map(|&l| (0..3).map(move |i| sample(&format!("{}:{i}", l.name()), l)))
            .collect()
    }

    #[test]
    fn exemplar_counts() {
        let train = training();
        assert_eq!(sample_exemplars(&train, Task::Fine, 1).unwrap().exemplars.len(), 13);
        assert_eq!(sample_exemplars(&train, Task::Binary, 1).unwrap().exemplars.len(), 2);
        let without: Vec<Sample> = train.into_iter().filter(|s| s.gold != Some(Label::Excusing)).collect();
        assert_eq!(
            sample_exemplars(&without, Task::Fine, 1),
            Err(PromptError::Coverage("Excusing".into()))
        );
    }

    #[test]
    fn exemplars_are_seeded() {
        let train = training();
        let a = sample_exemplars(&train, Task::Fine, 9).unwrap();
        let b = sample_exemplars(&train, Task::Fine, 9).unwrap();
        assert_eq!(a, b);
        let differs = (0..20u64).any(|s| sample_exemplars(&train, Task::Fine, s).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn zero_shot_binary_prompt() {
        let s = sample("q:1", Label::Pessimism);
        let p = build_prompt(&PromptSpec { task: Task::Binary, shot_mode: ShotMode::Zero, exemplars: None, sample: &s })
            .unwrap();
        let text = p.text();
        assert!(text.contains("\"Resistance\" or \"Cooperation\"."));
        assert!(!text.contains("Examples:"));
        assert!(text.contains("C: We argue all the time.\nT: Perhaps pick a calm moment to talk.\nClient Response: response for q:1"));
        assert!(!text.contains("rationale for q:1"));
        assert!(text.starts_with("Role:\nYou are a highly professional"));
    }

    #[test]
    fn few_shot_fine_prompt() {
        let train = training();
        let set = sample_exemplars(&train, Task::Fine, 4).unwrap();
        let s = sample("q:1", Label::Pessimism);
        let spec = PromptSpec { task: Task::Fine, shot_mode: ShotMode::Few, exemplars: Some(&set), sample: &s };
        let text = build_prompt(&spec).unwrap().text();
        assert_eq!(text.matches("\nBehavior: ").count(), 13);
        assert_eq!(text.matches("Reason: rationale for").count(), 13);
        assert!(text.contains("\"Avoidance - Minimum Talk\""));
        for l in Label::FINE {
            assert!(text.contains(&format!("\"{}\"", l.prompt_string())));
        }
        assert!(!text.contains("\"Cooperation\""));
        assert!(text.contains("Avoiding - Minimal Talk: The client withholds"));
        assert_eq!(build_prompt(&spec).unwrap().text(), text);
    }

    #[test]
    fn few_shot_requires_exemplars() {
        let s = sample("q:1", Label::Pessimism);
        let spec = PromptSpec { task: Task::Fine, shot_mode: ShotMode::Few, exemplars: None, sample: &s };
        assert!(build_prompt(&spec).is_err());
        let mut set = sample_exemplars(&training(), Task::Fine, 0).unwrap();
        set.exemplars.remove(&Label::Blaming);
        let spec = PromptSpec { exemplars: Some(&set), ..spec };
        assert_eq!(build_prompt(&spec), Err(PromptError::IncompleteExemplars("Blaming".into())));
    }

    #[test]
    fn permitted_strings_are_exactly_fine_prompt_spellings() {
        let mut got = permitted_label_strings(Task::Fine);
        let mut want: Vec<&str> = Label::FINE.iter().map(|l| l.prompt_string()).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn train_config_values() {
        let cfg = emit_train_config(Task::Fine);
        let map: BTreeMap<&str, &str> = cfg
            .lines()
            .map(|l| l.split_once('=').expect("flat key=value"))
            .collect();
        assert_eq!(map["learning_rate"], "5.0e-7");
        assert_eq!(map["num_train_epochs"], "10");
        assert_eq!(map["per_device_train_batch_size"], "4");
        assert_eq!(map["gradient_accumulation_steps"], "4");
        assert_eq!(map["lr_scheduler_type"], "cosine");
        assert_eq!(map["warmup_ratio"], "0.1");
        assert_eq!(map["optimizer"], "AdamW");
    }

    #[test]
    fn templates_round_trip_as_json() {
        let t = PromptTemplates::english();
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(PromptTemplates::from_json(&json).unwrap(), t);
    }
}
