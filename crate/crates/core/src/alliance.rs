//! Session-level resistance profiles and their correlation with
//! client-reported working alliance.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AllianceScores, Session, Speaker};
use crate::stats::student_t_two_sided;
use crate::taxonomy::{Label, PredictedLabel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllianceError {
    #[error("session {0} has no client utterances")]
    NoClientUtterances(String),
    #[error("need at least 3 observations, got {0}")]
    TooFew(usize),
    #[error("x and y differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("constant input has no variance")]
    DegenerateVariance,
    #[error("no profiles given")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionProfile {
    pub session_id: String,
    pub client_utterances: usize,
    pub resistant_count: usize,
    pub resistance_proportion: f64,
    pub per_label_count: BTreeMap<Label, usize>,
    pub per_label_proportion: BTreeMap<Label, f64>,
    pub distinct_types: usize,
}

/// Profile over one prediction per client utterance. `Invalid` predictions
/// count toward the denominator only; a bare `Resistance` counts as
/// resistant without a subtype.
pub fn session_profile(session_id: &str, predictions: &[PredictedLabel]) -> Result<SessionProfile, AllianceError> {
    let n = predictions.len();
    if n == 0 {
        return Err(AllianceError::NoClientUtterances(session_id.to_string()));
    }
    let mut per_label_count: BTreeMap<Label, usize> = Label::FINE.iter().map(|&l| (l, 0)).collect();
    let mut resistant = 0;
    for p in predictions {
        if let PredictedLabel::Label(l) = p {
            if *l == Label::Resistance {
                resistant += 1;
            } else if l.is_fine() {
                resistant += 1;
                *per_label_count.entry(*l).or_default() += 1;
            }
        }
    }
    let per_label_proportion = per_label_count
        .iter()
        .map(|(&l, &c)| (l, c as f64 / n as f64))
        .collect();
    Ok(SessionProfile {
        session_id: session_id.to_string(),
        client_utterances: n,
        resistant_count: resistant,
        resistance_proportion: resistant as f64 / n as f64,
        distinct_types: per_label_count.values().filter(|&&c| c > 0).count(),
        per_label_count,
        per_label_proportion,
    })
}

/// Builds profiles from sessions and predictions keyed `session:index`.
/// Client utterances without a prediction are skipped.
pub fn profiles_from_predictions(
    sessions: &[Session],
    predictions: &HashMap<String, PredictedLabel>,
) -> Result<Vec<SessionProfile>, AllianceError> {
    sessions
        .iter()
        .filter_map(|s| {
            let preds: Vec<PredictedLabel> = s
                .utterances
                .iter()
                .filter(|u| u.speaker == Speaker::Client)
                .filter_map(|u| predictions.get(&format!("{}:{}", s.session_id, u.index)).copied())
                .collect();
            (!preds.is_empty()).then(|| session_profile(&s.session_id, &preds))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceReport {
    pub sessions: usize,
    pub sessions_with_resistance: f64,
    pub mean_resistance_rate: f64,
    pub mean_distinct_types: f64,
}

pub fn prevalence(profiles: &[SessionProfile]) -> Result<PrevalenceReport, AllianceError> {
    if profiles.is_empty() {
        return Err(AllianceError::Empty);
    }
    let n = profiles.len() as f64;
    Ok(PrevalenceReport {
        sessions: profiles.len(),
        sessions_with_resistance: profiles.iter().filter(|p| p.resistant_count > 0).count() as f64 / n,
        mean_resistance_rate: profiles.iter().map(|p| p.resistance_proportion).sum::<f64>() / n,
        mean_distinct_types: profiles.iter().map(|p| p.distinct_types as f64).sum::<f64>() / n,
    })
}

/// Pearson r with a two-sided p-value from Student's t on n - 2 df.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64), AllianceError> {
    if x.len() != y.len() {
        return Err(AllianceError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(AllianceError::TooFew(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AllianceError::DegenerateVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok((r, pearson_p_value(r, n)))
}

/// Two-sided p for a correlation `r` over `n` pairs.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllianceDimension {
    Goal,
    Task,
    Bond,
    Overall,
}

impl AllianceDimension {
    pub const ALL: [AllianceDimension; 4] = [
        AllianceDimension::Goal,
        AllianceDimension::Task,
        AllianceDimension::Bond,
        AllianceDimension::Overall,
    ];

    pub fn of(self, s: &AllianceScores) -> f64 {
        match self {
            AllianceDimension::Goal => s.goal,
            AllianceDimension::Task => s.task,
            AllianceDimension::Bond => s.bond,
            AllianceDimension::Overall => s.overall,
        }
    }

    fn name(self) -> &'static str {
        match self {
            AllianceDimension::Goal => "Goal",
            AllianceDimension::Task => "Task",
            AllianceDimension::Bond => "Bond",
            AllianceDimension::Overall => "Overall",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    /// A fine label name, or "Resistance" for the session resistance level.
    pub behavior: String,
    pub cells: Vec<CorrelationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub sessions: usize,
    pub columns: Vec<AllianceDimension>,
    pub rows: Vec<CorrelationRow>,
}

/// Correlates per-label and overall resistance proportions with each alliance
/// dimension. Sessions without alliance scores are left out.
pub fn correlate_alliance(
    profiles: &[SessionProfile],
    alliance: &HashMap<String, AllianceScores>,
) -> Result<CorrelationTable, AllianceError> {
    let paired: Vec<(&SessionProfile, &AllianceScores)> = profiles
        .iter()
        .filter_map(|p| alliance.get(&p.session_id).map(|a| (p, a)))
        .collect();
    if paired.len() < 3 {
        return Err(AllianceError::TooFew(paired.len()));
    }
    let columns: Vec<Vec<f64>> = AllianceDimension::ALL
        .iter()
        .map(|d| paired.iter().map(|(_, a)| d.of(a)).collect())
        .collect();
    let row = |behavior: String, xs: Vec<f64>| CorrelationRow {
        behavior,
        cells: columns
            .iter()
            .map(|ys| match pearson(&xs, ys) {
                Ok((r, p)) => CorrelationCell { r: Some(r), p: Some(p), stars: significance_stars(p).into() },
                Err(_) => CorrelationCell { r: None, p: None, stars: String::new() },
            })
            .collect(),
    };
    let mut rows: Vec<CorrelationRow> = Label::FINE
        .iter()
        .map(|l| row(l.name().to_string(), paired.iter().map(|(p, _)| p.per_label_proportion[l]).collect()))
        .collect();
    rows.push(row(
        "Resistance".into(),
        paired.iter().map(|(p, _)| p.resistance_proportion).collect(),
    ));
    Ok(CorrelationTable {
        sessions: paired.len(),
        columns: AllianceDimension::ALL.to_vec(),
        rows,
    })
}

impl CorrelationTable {
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<16}", "Behaviors");
        for c in &self.columns {
            let _ = write!(out, "{:>14}", c.name());
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<16}", row.behavior);
            for cell in &row.cells {
                let text = match cell.r {
                    Some(r) => format!("{r:.4}{}", cell.stars),
                    None => "undefined".into(),
                };
                let _ = write!(out, "{text:>14}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "n = {} sessions; ***/**/* p < .001/.01/.05", self.sessions);
        out
    }
}
