use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use resistkit_core::corpus::Sample;
use resistkit_core::evaluation::{
    aggregate_folds, classification_metrics, collapse_to_binary, confusion, pipeline_predictions, stratified_kfold,
    FineEvalMode, FoldAssignment, MetricsReport,
};
use resistkit_core::prompting::{build_prompt, sample_exemplars, ExemplarSet, PromptSpec, ShotMode};
use resistkit_core::taxonomy::{Label, PredictedLabel, Task};
use resistkit_inference::mock::{EchoGoldBackend, FixedReplyBackend};
use resistkit_inference::{read_run_file, run_batch, BatchItem, ChatBackend, HttpChatClient, RunMeta, RunPaths};
use serde::{Deserialize, Serialize};

use super::read_samples;
use crate::config::Settings;
use crate::output::{emit, invalid, json_line, jsonl, open, Invalid};

pub const MOCK_GOLD: &str = "mock-gold";
pub const MOCK_TEXT: &str = "mock-text";
const MOCK_TEXT_REPLY: &str = "I think the client resists.";

#[derive(Debug, Args)]
pub struct RunArgs {
    pub samples: Option<PathBuf>,
    /// Run name; the run file is <runs-dir>/<run-id>.jsonl.
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    /// Requests in flight; the backend's configured value when absent.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Fold assignment written by `split` (few-shot exemplars come from the
    /// other folds); computed from --k and --seed when absent.
    #[arg(long)]
    pub folds: Option<PathBuf>,
    /// For the fine task, only samples whose gold label is a fine label.
    #[arg(long)]
    pub resistant_only: bool,
}

fn backend_for(s: &Settings, samples: &[Sample]) -> Result<(Arc<dyn ChatBackend>, usize)> {
    Ok(match s.backend.as_str() {
        MOCK_GOLD => {
            let entries = samples
                .iter()
                .filter_map(|x| x.gold.map(|g| (x.response.clone(), g, x.rationale.clone().unwrap_or_default())));
            (Arc::new(EchoGoldBackend::new(entries)), 4)
        }
        MOCK_TEXT => (Arc::new(FixedReplyBackend::new(MOCK_TEXT_REPLY)), 4),
        _ => {
            let cfg = s.http_backend()?;
            let parallelism = cfg.parallelism;
            (Arc::new(HttpChatClient::new(cfg)?), parallelism)
        }
    })
}

fn gold_pairs(samples: &[Sample]) -> Vec<(String, Label)> {
    samples.iter().filter_map(|x| x.gold.map(|g| (x.sample_id.clone(), g))).collect()
}

fn fold_assignment(s: &Settings, given: Option<&Path>, gold: &[(String, Label)], origin: &Path) -> Result<FoldAssignment> {
    match given {
        Some(p) => serde_json::from_reader(open(p)?).map_err(|e| invalid(p, e)),
        None => stratified_kfold(gold, s.k, s.seed).map_err(|e| invalid(origin, e)),
    }
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    run_file: &'a Path,
    manifest: &'a Path,
    total: usize,
    finished: usize,
    resumed: usize,
    requests_issued: usize,
    errors: usize,
    invalid: usize,
}

pub async fn run(s: &Settings, a: RunArgs) -> Result<()> {
    let path = s.path_or(a.samples.as_deref(), s.config.paths.samples.as_ref(), "samples")?;
    let mut samples = read_samples(&path)?;
    if s.task == Task::Fine && a.resistant_only {
        samples.retain(|x| x.gold.is_some_and(Label::is_fine));
    }
    if samples.is_empty() {
        return Err(invalid(&path, "no samples to run"));
    }

    let exemplars: Option<(FoldAssignment, Vec<ExemplarSet>)> = match s.shots {
        ShotMode::Zero => None,
        ShotMode::Few => {
            if let Some(x) = samples.iter().find(|x| x.gold.is_none()) {
                return Err(invalid(&path, format!("few-shot runs need gold on every sample; {} has none", x.sample_id)));
            }
            let folds = fold_assignment(s, a.folds.as_deref(), &gold_pairs(&samples), &path)?;
            let mut sets = Vec::with_capacity(folds.k);
            for f in 0..folds.k {
                let training: Vec<Sample> =
                    samples.iter().filter(|x| folds.fold_of(&x.sample_id) != Some(f)).cloned().collect();
                sets.push(sample_exemplars(&training, s.task, s.seed + f as u64).map_err(|e| invalid(&path, e))?);
            }
            Some((folds, sets))
        }
    };

    let mut items = Vec::with_capacity(samples.len());
    for x in &samples {
        let set = match &exemplars {
            None => None,
            Some((folds, sets)) => {
                let f = folds
                    .fold_of(&x.sample_id)
                    .ok_or_else(|| Invalid(format!("sample {} is not in the fold assignment", x.sample_id)))?;
                Some(&sets[f])
            }
        };
        let prompt = build_prompt(&PromptSpec { task: s.task, shot_mode: s.shots, exemplars: set, sample: x })
            .map_err(|e| invalid(&path, format!("{}: {e}", x.sample_id)))?;
        items.push(BatchItem { sample_id: x.sample_id.clone(), prompt });
    }

    let (backend, default_parallelism) = backend_for(s, &samples)?;
    let run_id = a.run_id.unwrap_or_else(|| {
        format!("{}-{}-{}-s{}", s.backend, task_name(s.task), s.shots.as_str(), s.seed)
    });
    let dir = a
        .runs_dir
        .or_else(|| s.config.paths.runs.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let paths = RunPaths::in_dir(&dir, &run_id);
    let meta = RunMeta {
        run_id,
        model: backend.model().to_string(),
        task: s.task,
        shot_mode: s.shots,
        seed: s.seed,
    };
    let outcome = run_batch(items, meta, backend, a.parallelism.unwrap_or(default_parallelism), &paths).await?;
    for e in &outcome.manifest.errors {
        eprintln!("warning: {} failed ({}): {}", e.sample_id, e.kind, e.message);
    }
    let summary = RunSummary {
        run_file: &paths.run_file,
        manifest: &paths.manifest,
        total: outcome.manifest.total,
        finished: outcome.manifest.finished,
        resumed: outcome.resumed,
        requests_issued: outcome.requests_issued,
        errors: outcome.manifest.errors.len(),
        invalid: outcome.predictions.iter().filter(|p| !p.valid).count(),
    };
    print!("{}", json_line(&summary)?);
    if !outcome.manifest.errors.is_empty() {
        bail!("{} requests failed; rerun the same command to resume", outcome.manifest.errors.len());
    }
    Ok(())
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Binary => "binary",
        Task::Fine => "fine",
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub samples: Option<PathBuf>,
    /// Run file written by `run`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub folds: Option<PathBuf>,
    /// Fine task only: gold_resistance or pipeline.
    #[arg(long, value_parser = parse_fine_mode, default_value = "gold_resistance")]
    pub fine_mode: FineEvalMode,
    /// Binary run gating the fine run in pipeline mode.
    #[arg(long)]
    pub binary_run: Option<PathBuf>,
}

fn parse_fine_mode(s: &str) -> Result<FineEvalMode, String> {
    match s.replace('-', "_").as_str() {
        "gold_resistance" => Ok(FineEvalMode::GoldResistance),
        "pipeline" => Ok(FineEvalMode::Pipeline),
        other => Err(format!("unknown fine mode {other:?} (expected gold_resistance or pipeline)")),
    }
}

/// One line of a score file.
#[derive(Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_mode: Option<FineEvalMode>,
    #[serde(flatten)]
    pub report: MetricsReport,
}

fn predictions_of(path: &Path) -> Result<HashMap<String, PredictedLabel>> {
    let preds = read_run_file(path).map_err(|e| invalid(path, e))?;
    Ok(preds.into_iter().map(|p| (p.sample_id, p.label)).collect())
}

pub fn score(s: &Settings, a: ScoreArgs) -> Result<()> {
    let path = s.path_or(a.samples.as_deref(), s.config.paths.samples.as_ref(), "samples")?;
    let samples = read_samples(&path)?;
    let all_gold = gold_pairs(&samples);
    if all_gold.is_empty() {
        return Err(invalid(&path, "no sample carries a gold label"));
    }
    let folds = fold_assignment(s, a.folds.as_deref(), &all_gold, &path)?;

    let mut predictions = predictions_of(&a.run)?;
    let (gold, labels, fine_mode): (Vec<(String, Label)>, Vec<Label>, Option<FineEvalMode>) = match s.task {
        Task::Binary => {
            predictions = collapse_to_binary(&predictions);
            let gold = all_gold.iter().map(|(id, l)| (id.clone(), l.to_binary())).collect();
            (gold, Label::BINARY.to_vec(), None)
        }
        Task::Fine => {
            if a.fine_mode == FineEvalMode::Pipeline {
                let binary_path = a.binary_run.as_deref().context("pipeline mode needs --binary-run")?;
                let binary = collapse_to_binary(&predictions_of(binary_path)?);
                predictions = pipeline_predictions(&binary, &predictions);
            }
            (a.fine_mode.gold_subset(&all_gold), a.fine_mode.labels(), Some(a.fine_mode))
        }
    };

    let missing = gold.iter().filter(|(id, _)| !predictions.contains_key(id)).count();
    if missing > 0 {
        eprintln!("warning: {missing} scored samples have no prediction and count as invalid");
        for (id, _) in &gold {
            predictions.entry(id.clone()).or_insert(PredictedLabel::Invalid);
        }
    }

    let mut rows = Vec::with_capacity(folds.k);
    for f in 0..folds.k {
        let fold_gold: Vec<(String, Label)> =
            gold.iter().filter(|(id, _)| folds.fold_of(id) == Some(f)).cloned().collect();
        if fold_gold.is_empty() {
            eprintln!("warning: fold {f} has no scored samples");
            continue;
        }
        let cm = confusion(&fold_gold, &predictions, &labels).map_err(|e| invalid(&path, e))?;
        let report = classification_metrics(&cm).map_err(|e| invalid(&path, e))?;
        rows.push(FoldReport { fold: f, task: s.task, fine_mode, report });
    }
    if gold.iter().any(|(id, _)| folds.fold_of(id).is_none()) {
        eprintln!("warning: some scored samples are outside the fold assignment and were left out");
    }

    if s.table {
        let mut out = format!("{:<6}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "Fold", "P.", "R.", "F1", "Acc.", "Invalid");
        for r in &rows {
            let m = &r.report;
            out.push_str(&format!(
                "{:<6}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n",
                r.fold, m.macro_precision, m.macro_recall, m.macro_f1, m.accuracy, m.invalid_rate
            ));
        }
        emit(s, &out)
    } else {
        emit(s, &jsonl(&rows)?)
    }
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Score files; each line is one fold report. Every `.jsonl` file of the
    /// configured reports directory when none are given.
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub decimals: usize,
    /// Render cells as percentages.
    #[arg(long)]
    pub percent: bool,
}

pub fn aggregate(s: &Settings, a: AggregateArgs) -> Result<()> {
    let mut files = a.reports;
    if files.is_empty() {
        let dir = s.config.paths.reports.as_ref().context("no score files given and no reports directory configured")?;
        for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    }
    let mut reports = Vec::new();
    for p in &files {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: FoldReport = serde_json::from_str(line).map_err(|e| invalid(p, format!("line {}: {e}", i + 1)))?;
            reports.push(r.report);
        }
    }
    let agg = aggregate_folds(&reports).map_err(|e| Invalid(e.to_string()))?;
    if s.table {
        emit(s, &agg.render_table(a.decimals, a.percent))
    } else {
        emit(s, &json_line(&agg)?)
    }
}
