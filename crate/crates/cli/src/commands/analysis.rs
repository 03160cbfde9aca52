use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use resistkit_core::alliance::{correlate_alliance, prevalence, profiles_from_predictions, PrevalenceReport, SessionProfile};
use resistkit_core::corpus::Session;
use resistkit_core::lexstats::{lexical_report, ngram_counts, LogOddsConfig};
use resistkit_core::study::{analyze, EffectSizeMode, StudyDataset};
use resistkit_core::taxonomy::{Label, Task};
use resistkit_inference::read_run_file;
use serde::Serialize;

use super::{read_samples, read_sessions};
use crate::config::Settings;
use crate::output::{emit, invalid, json_line, Invalid};

#[derive(Debug, Args)]
pub struct LexstatsArgs {
    pub samples: Option<PathBuf>,
    /// Features kept per category.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Background count below which an n-gram is not ranked.
    #[arg(long, default_value_t = 3)]
    pub min_count: u64,
}

pub fn lexstats(s: &Settings, a: LexstatsArgs) -> Result<()> {
    let path = s.path_or(a.samples.as_deref(), s.config.paths.samples.as_ref(), "samples")?;
    let samples = read_samples(&path)?;
    let mut groups: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for x in &samples {
        if let Some(g) = x.gold {
            let key = match s.task {
                Task::Binary => g.to_binary(),
                Task::Fine => g,
            };
            groups.entry(key).or_default().push(&x.response);
        }
    }
    let named: Vec<(String, Vec<&str>)> = groups.into_iter().map(|(l, t)| (l.name().to_string(), t)).collect();
    let table = ngram_counts(&named, s.tokenizer).map_err(|e| invalid(&path, e))?;
    let config = LogOddsConfig { alpha0: s.alpha0, min_count: a.min_count };
    let report = lexical_report(&table, s.tokenizer, &config, a.top).map_err(|e| invalid(&path, e))?;
    if s.table {
        emit(s, &report.render_table())
    } else {
        emit(s, &json_line(&report)?)
    }
}

#[derive(Debug, Args)]
pub struct SessionsArgs {
    pub sessions: Option<PathBuf>,
    /// Run file whose predictions label the client utterances.
    #[arg(long)]
    pub run: PathBuf,
}

fn profiles(s: &Settings, a: &SessionsArgs) -> Result<(Vec<Session>, Vec<SessionProfile>)> {
    let path = s.path_or(a.sessions.as_deref(), s.config.paths.sessions.as_ref(), "sessions")?;
    let sessions = read_sessions(&path)?;
    let preds = read_run_file(&a.run).map_err(|e| invalid(&a.run, e))?;
    let by_id: HashMap<_, _> = preds.into_iter().map(|p| (p.sample_id, p.label)).collect();
    let profiles = profiles_from_predictions(&sessions, &by_id).map_err(|e| invalid(&a.run, e))?;
    Ok((sessions, profiles))
}

#[derive(Debug, Serialize)]
struct SessionsReport {
    profiles: Vec<SessionProfile>,
    prevalence: PrevalenceReport,
}

pub fn sessions(s: &Settings, a: SessionsArgs) -> Result<()> {
    let (_, profiles) = profiles(s, &a)?;
    let prevalence = prevalence(&profiles).map_err(|e| Invalid(e.to_string()))?;
    if s.table {
        let mut out = format!("{:<16}{:>10}{:>12}{:>10}\n", "Session", "Client", "Resistance", "Types");
        for p in &profiles {
            out.push_str(&format!(
                "{:<16}{:>10}{:>12.4}{:>10}\n",
                p.session_id, p.client_utterances, p.resistance_proportion, p.distinct_types
            ));
        }
        out.push_str(&format!(
            "\nsessions {}\nwith resistance {:.4}\nmean resistance rate {:.4}\nmean distinct types {:.4}\n",
            prevalence.sessions,
            prevalence.sessions_with_resistance,
            prevalence.mean_resistance_rate,
            prevalence.mean_distinct_types
        ));
        emit(s, &out)
    } else {
        emit(s, &json_line(&SessionsReport { profiles, prevalence })?)
    }
}

pub fn correlate(s: &Settings, a: SessionsArgs) -> Result<()> {
    let (sessions, profiles) = profiles(s, &a)?;
    let alliance: HashMap<String, _> =
        sessions.iter().filter_map(|x| x.alliance.map(|al| (x.session_id.clone(), al))).collect();
    let table = correlate_alliance(&profiles, &alliance).map_err(|e| Invalid(e.to_string()))?;
    if s.table {
        emit(s, &table.render_table())
    } else {
        emit(s, &json_line(&table)?)
    }
}

#[derive(Debug, Args)]
pub struct AnovaArgs {
    /// A study dataset, or a study export (its `dataset` member is used).
    pub dataset: PathBuf,
    /// paired, paired_difference or independent.
    #[arg(long, value_parser = parse_effect_size, default_value = "paired")]
    pub effect_size: EffectSizeMode,
}

fn parse_effect_size(s: &str) -> Result<EffectSizeMode, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown effect size {s:?} (expected paired, paired_difference or independent)"))
}

pub fn anova(s: &Settings, a: AnovaArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.dataset).with_context(|| format!("reading {}", a.dataset.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid(&a.dataset, e))?;
    if let Some(inner) = value.get_mut("dataset") {
        value = inner.take();
    }
    let data: StudyDataset = serde_json::from_value(value).map_err(|e| invalid(&a.dataset, e))?;
    let result = analyze(&data, a.effect_size).map_err(|e| invalid(&a.dataset, e))?;
    if s.table {
        let opt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = result.anova.render_table();
        out.push_str(&format!(
            "\nd experimental pre-post {}\nd control pre-post {}\nd post between groups {}\npost t {} df {} p {}\n",
            opt(result.d_experimental_pre_post),
            opt(result.d_control_pre_post),
            opt(result.d_post_between),
            opt(result.post_t),
            opt(result.post_df),
            opt(result.post_p)
        ));
        emit(s, &out)
    } else {
        emit(s, &json_line(&result)?)
    }
}
