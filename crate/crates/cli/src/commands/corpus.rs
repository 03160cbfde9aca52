use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use resistkit_core::corpus::{
    adjudicate as adjudicate_one, annotator_pairs, attach_gold, build_samples as build, cohen_kappa, corpus_stats,
    group_annotations, synthetic, write_jsonl, HistoryWindow, Verdict,
};
use resistkit_core::evaluation::stratified_kfold;
use resistkit_core::prompting::{build_prompt, sample_exemplars, PromptSpec, ShotMode};
use resistkit_core::taxonomy::Label;
use resistkit_server::ScenarioBank;
use serde::Serialize;

use super::{read_annotations, read_samples, read_sessions};
use crate::config::Settings;
use crate::output::{emit, invalid, json_line, jsonl, Invalid};

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize)]
struct ValidationSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    sessions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    utterances: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    annotations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
}

pub fn validate(s: &Settings, a: ValidateArgs) -> Result<()> {
    let p = &s.config.paths;
    let sessions_path = a.sessions.or_else(|| p.sessions.clone());
    let annotations_path = a.annotations.or_else(|| p.annotations.clone());
    let samples_path = a.samples.or_else(|| p.samples.clone());
    if sessions_path.is_none() && annotations_path.is_none() && samples_path.is_none() {
        bail!("nothing to validate: give --sessions, --annotations or --samples");
    }
    let mut summary = ValidationSummary::default();
    let mut client_ids = None;
    if let Some(path) = &sessions_path {
        let sessions = read_sessions(path)?;
        summary.sessions = Some(sessions.len());
        summary.utterances = Some(sessions.iter().map(|s| s.utterances.len()).sum());
        client_ids = Some(
            sessions
                .iter()
                .flat_map(|s| s.client_utterances().map(move |u| format!("{}:{}", s.session_id, u.index)))
                .collect::<HashSet<String>>(),
        );
    }
    if let Some(path) = &annotations_path {
        let anns = read_annotations(path)?;
        if let Some(ids) = &client_ids {
            if let Some(orphan) = anns.iter().find(|a| !ids.contains(&a.sample_id)) {
                return Err(invalid(path, format!("{} does not name a client utterance of the sessions", orphan.sample_id)));
            }
        }
        summary.annotations = Some(anns.len());
    }
    if let Some(path) = &samples_path {
        summary.samples = Some(read_samples(path)?.len());
    }
    if s.table {
        let mut out = String::new();
        for (k, v) in [
            ("sessions", summary.sessions),
            ("utterances", summary.utterances),
            ("annotations", summary.annotations),
            ("samples", summary.samples),
        ] {
            if let Some(v) = v {
                out.push_str(&format!("{k:<12}{v:>8}\n"));
            }
        }
        emit(s, &out)
    } else {
        emit(s, &json_line(&summary)?)
    }
}

#[derive(Debug, Args)]
pub struct BuildSamplesArgs {
    pub sessions: Option<PathBuf>,
    /// Attach adjudicated gold labels and rationales.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Preceding utterances kept as history; the whole prefix when absent.
    #[arg(long)]
    pub window: Option<usize>,
    /// Drop samples without a final gold label.
    #[arg(long)]
    pub labeled_only: bool,
}

pub fn build_samples(s: &Settings, a: BuildSamplesArgs) -> Result<()> {
    let path = s.path_or(a.sessions.as_deref(), s.config.paths.sessions.as_ref(), "sessions")?;
    let sessions = read_sessions(&path)?;
    let window = match a.window {
        None => HistoryWindow::Full,
        Some(n) => HistoryWindow::Turns(n),
    };
    let (mut samples, skipped) = build(&sessions, window).map_err(|e| Invalid(e.to_string()))?;
    if !skipped.skipped.is_empty() {
        eprintln!("skipped {} client turns without a preceding counselor turn", skipped.skipped.len());
    }
    let ann_path = a.annotations.or_else(|| s.config.paths.annotations.clone());
    if let Some(p) = ann_path {
        let anns = read_annotations(&p)?;
        attach_gold(&mut samples, &anns);
    }
    if a.labeled_only {
        samples.retain(|x| x.gold.is_some());
    }
    emit(s, &jsonl(&samples)?)
}

#[derive(Debug, Args)]
pub struct SamplesArg {
    /// Samples file (JSON lines).
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotationsArg {
    /// Annotation records (JSON lines).
    pub annotations: Option<PathBuf>,
}

pub fn stats(s: &Settings, a: SamplesArg) -> Result<()> {
    let path = s.path_or(a.samples.as_deref(), s.config.paths.samples.as_ref(), "samples")?;
    let report = corpus_stats(&read_samples(&path)?);
    if s.table {
        emit(s, &report.render_table())
    } else {
        emit(s, &json_line(&report)?)
    }
}

pub fn agreement(s: &Settings, a: AnnotationsArg) -> Result<()> {
    let path = s.path_or(a.annotations.as_deref(), s.config.paths.annotations.as_ref(), "annotations")?;
    let anns = read_annotations(&path)?;
    let (first, second) = annotator_pairs(&anns);
    let report = cohen_kappa(&first, &second, &Label::ANNOTATION).map_err(|e| invalid(&path, e))?;
    if s.table {
        let mut out = format!(
            "items {}\nkappa {:.4}\nobserved {:.4}\nchance {:.4}\n",
            report.item_count, report.overall_kappa, report.observed_agreement, report.chance_agreement
        );
        for (label, k) in &report.per_category_kappa {
            let cell = k.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!("{:<16}{cell:>10}\n", label.name()));
        }
        emit(s, &out)
    } else {
        emit(s, &json_line(&report)?)
    }
}

#[derive(Debug, Serialize)]
struct AdjudicationRow {
    sample_id: String,
    #[serde(flatten)]
    adjudication: resistkit_core::corpus::Adjudication,
    #[serde(skip_serializing_if = "Option::is_none")]
    rationale: Option<String>,
}

pub fn adjudicate(s: &Settings, a: AnnotationsArg) -> Result<()> {
    let path = s.path_or(a.annotations.as_deref(), s.config.paths.annotations.as_ref(), "annotations")?;
    let anns = read_annotations(&path)?;
    let mut rows = Vec::new();
    for (sample_id, group) in group_annotations(&anns) {
        let adjudication = adjudicate_one(&group).map_err(|e| invalid(&path, format!("{sample_id}: {e}")))?;
        let rationale = adjudication.rationale(&group).map(String::from);
        rows.push(AdjudicationRow { sample_id, adjudication, rationale });
    }
    if s.table {
        let mut out = String::new();
        for r in &rows {
            let verdict = match r.adjudication.verdict {
                Verdict::Final(l) => l.name().to_string(),
                Verdict::NeedsMoreAnnotations => "needs more annotations".into(),
            };
            out.push_str(&format!("{:<24}{verdict}\n", r.sample_id));
        }
        emit(s, &out)
    } else {
        emit(s, &jsonl(&rows)?)
    }
}

pub fn split(s: &Settings, a: SamplesArg) -> Result<()> {
    let path = s.path_or(a.samples.as_deref(), s.config.paths.samples.as_ref(), "samples")?;
    let samples = read_samples(&path)?;
    let items: Vec<(String, Label)> = samples.iter().filter_map(|x| x.gold.map(|g| (x.sample_id.clone(), g))).collect();
    if items.len() < samples.len() {
        eprintln!("{} samples without gold are left out of the split", samples.len() - items.len());
    }
    let folds = stratified_kfold(&items, s.k, s.seed).map_err(|e| invalid(&path, e))?;
    for w in &folds.warnings {
        eprintln!("warning: {w}");
    }
    match &s.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join("folds.json"), serde_json::to_string_pretty(&folds)? + "\n")?;
            for f in 0..folds.k {
                let members: Vec<_> = samples.iter().filter(|x| folds.fold_of(&x.sample_id) == Some(f)).collect();
                let mut buf = Vec::new();
                write_jsonl(&mut buf, &members)?;
                std::fs::write(dir.join(format!("fold_{f}.jsonl")), buf)?;
            }
            Ok(())
        }
        None if s.table => {
            let mut counts: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
            for (id, label) in &items {
                counts.entry(*label).or_insert_with(|| vec![0; folds.k])[folds.folds[id]] += 1;
            }
            let mut out = format!("{:<16}", "Label");
            for f in 0..folds.k {
                out.push_str(&format!("{:>8}", format!("fold {f}")));
            }
            out.push('\n');
            for (label, c) in counts {
                out.push_str(&format!("{:<16}", label.name()));
                for n in c {
                    out.push_str(&format!("{n:>8}"));
                }
                out.push('\n');
            }
            print!("{out}");
            Ok(())
        }
        None => {
            print!("{}", json_line(&folds)?);
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct PromptPreviewArgs {
    pub samples: Option<PathBuf>,
    /// Sample to render; the first one when absent.
    #[arg(long)]
    pub sample_id: Option<String>,
}

pub fn prompt_preview(s: &Settings, a: PromptPreviewArgs) -> Result<()> {
    let path = s.path_or(a.samples.as_deref(), s.config.paths.samples.as_ref(), "samples")?;
    let samples = read_samples(&path)?;
    let target = match &a.sample_id {
        Some(id) => samples.iter().find(|x| &x.sample_id == id).with_context(|| format!("no sample {id}"))?,
        None => samples.first().context("samples file is empty")?,
    };
    let exemplars = match s.shots {
        ShotMode::Zero => None,
        ShotMode::Few => {
            let training: Vec<_> = samples.iter().filter(|x| x.sample_id != target.sample_id).cloned().collect();
            Some(sample_exemplars(&training, s.task, s.seed).map_err(|e| invalid(&path, e))?)
        }
    };
    let prompt = build_prompt(&PromptSpec { task: s.task, shot_mode: s.shots, exemplars: exemplars.as_ref(), sample: target })
        .map_err(|e| invalid(&path, e))?;
    if s.table {
        emit(s, &(prompt.text() + "\n"))
    } else {
        emit(s, &json_line(&prompt)?)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub sessions: usize,
    #[arg(long, default_value_t = 10)]
    pub turns: usize,
}

pub fn synth(s: &Settings, a: SynthArgs) -> Result<()> {
    let dir = s.out.clone().context("synth needs --out DIR")?;
    std::fs::create_dir_all(&dir)?;
    let (sessions, annotations) = synthetic::generate(a.sessions, a.turns, s.seed);
    let write = |name: &str, buf: Vec<u8>| std::fs::write(dir.join(name), buf).with_context(|| format!("writing {name}"));
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &sessions)?;
    write("sessions.jsonl", buf)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &annotations)?;
    write("annotations.jsonl", buf)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, ScenarioBank::synthetic().scenarios())?;
    write("scenarios.jsonl", buf)?;
    println!(
        "{}",
        serde_json::json!({"sessions": sessions.len(), "annotations": annotations.len(), "scenarios": 30, "dir": dir})
    );
    Ok(())
}
