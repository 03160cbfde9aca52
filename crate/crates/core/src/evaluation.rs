//! Stratified k-fold splitting, confusion-matrix metrics and cross-fold
//! aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{mean, population_std};
use crate::taxonomy::{Label, PredictedLabel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("k = {k} exceeds the number of samples ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("no prediction for sample {0}")]
    MissingPrediction(String),
    #[error("label {label} of sample {sample_id} is outside the scored label list")]
    LabelOutsideSpace { sample_id: String, label: String },
    #[error("confusion matrix is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
    /// Labels with fewer than `k` instances.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    pub fn fold_of(&self, sample_id: &str) -> Option<usize> {
        self.folds.get(sample_id).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Shuffles each label's items with a seeded RNG and deals them round-robin.
///
/// The dealing position carries over from one label to the next, so overall
/// fold sizes also stay within one of each other.
pub fn stratified_kfold<L: Ord + Clone + std::fmt::Display>(
    items: &[(String, L)],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, EvalError> {
    if k < 2 {
        return Err(EvalError::KTooSmall(k));
    }
    if k > items.len() {
        return Err(EvalError::KTooLarge { k, n: items.len() });
    }
    let mut by_label: BTreeMap<L, Vec<&str>> = BTreeMap::new();
    for (id, label) in items {
        by_label.entry(label.clone()).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut cursor = 0usize;
    for (label, mut ids) in by_label {
        if ids.len() < k {
            warnings.push(format!("label {label} has {} instances, fewer than k = {k}", ids.len()));
        }
        ids.shuffle(&mut rng);
        for id in ids {
            folds.insert(id.to_string(), cursor % k);
            cursor += 1;
        }
    }
    Ok(FoldAssignment { k, seed, folds, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<Label>,
    /// `counts[gold][pred]`, indexed like `labels`.
    pub counts: Vec<Vec<u64>>,
    /// Invalid predictions per gold label.
    pub invalid: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<Label>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
            invalid: vec![0; n],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.invalid.iter().sum::<u64>()
    }

    fn index(&self, label: Label) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn record(&mut self, gold: Label, pred: PredictedLabel) -> Result<(), Label> {
        let g = self.index(gold).ok_or(gold)?;
        match pred {
            PredictedLabel::Invalid => self.invalid[g] += 1,
            PredictedLabel::Label(p) => {
                let p = self.index(p).ok_or(p)?;
                self.counts[g][p] += 1;
            }
        }
        Ok(())
    }
}

/// Tallies (gold, predicted) pairs; every gold sample needs a prediction.
pub fn confusion(
    gold: &[(String, Label)],
    predictions: &HashMap<String, PredictedLabel>,
    labels: &[Label],
) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::new(labels.to_vec());
    for (id, g) in gold {
        let pred = predictions
            .get(id)
            .copied()
            .ok_or_else(|| EvalError::MissingPrediction(id.clone()))?;
        cm.record(*g, pred).map_err(|l| EvalError::LabelOutsideSpace {
            sample_id: id.clone(),
            label: l.name().to_string(),
        })?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_label: Vec<LabelMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub invalid_rate: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let n = cm.labels.len();
    let mut per_label = Vec::with_capacity(n);
    let mut diagonal = 0;
    for i in 0..n {
        let tp = cm.counts[i][i];
        diagonal += tp;
        let predicted: u64 = (0..n).map(|g| cm.counts[g][i]).sum();
        let support: u64 = cm.counts[i].iter().sum::<u64>() + cm.invalid[i];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_label.push(LabelMetrics {
            label: cm.labels[i],
            precision,
            recall,
            f1: f1_score(precision, recall),
            support,
        });
    }
    let avg = |f: fn(&LabelMetrics) -> f64| per_label.iter().map(f).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        macro_precision: avg(|m| m.precision),
        macro_recall: avg(|m| m.recall),
        macro_f1: avg(|m| m.f1),
        accuracy: ratio(diagonal, total),
        invalid_rate: ratio(cm.invalid.iter().sum(), total),
        total,
        per_label,
    })
}

/// Maps every fine resistance label to `Resistance`; `Invalid` stays `Invalid`.
pub fn collapse_to_binary(predictions: &HashMap<String, PredictedLabel>) -> HashMap<String, PredictedLabel> {
    predictions
        .iter()
        .map(|(id, p)| (id.clone(), p.to_binary()))
        .collect()
}

/// How the fine task is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineEvalMode {
    /// Only gold-resistant samples, 13 labels.
    #[default]
    GoldResistance,
    /// Every sample; the binary prediction gates the fine one, 14 labels.
    Pipeline,
}

impl FineEvalMode {
    pub fn labels(self) -> Vec<Label> {
        match self {
            FineEvalMode::GoldResistance => Label::FINE.to_vec(),
            FineEvalMode::Pipeline => {
                let mut v = Label::FINE.to_vec();
                v.push(Label::Collaboration);
                v
            }
        }
    }

    /// Gold pairs scored under this mode.
    pub fn gold_subset(self, gold: &[(String, Label)]) -> Vec<(String, Label)> {
        match self {
            FineEvalMode::GoldResistance => gold.iter().filter(|(_, l)| l.is_fine()).cloned().collect(),
            FineEvalMode::Pipeline => gold.to_vec(),
        }
    }
}

/// Chains binary and fine predictions: Collaboration passes through,
/// Resistance takes the fine prediction (Invalid if it is missing), Invalid
/// stays Invalid.
pub fn pipeline_predictions(
    binary: &HashMap<String, PredictedLabel>,
    fine: &HashMap<String, PredictedLabel>,
) -> HashMap<String, PredictedLabel> {
    binary
        .iter()
        .map(|(id, b)| {
            let p = match b {
                PredictedLabel::Label(Label::Collaboration) => PredictedLabel::Label(Label::Collaboration),
                PredictedLabel::Label(Label::Resistance) => match fine.get(id) {
                    Some(PredictedLabel::Label(l)) if l.is_fine() => PredictedLabel::Label(*l),
                    _ => PredictedLabel::Invalid,
                },
                _ => PredictedLabel::Invalid,
            };
            (id.clone(), p)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        MeanStd {
            mean: mean(xs),
            std: population_std(xs),
        }
    }

    /// `mean_{std}` with the given number of decimals.
    pub fn render(&self, decimals: usize, percent: bool) -> String {
        let scale = if percent { 100.0 } else { 1.0 };
        format!(
            "{:.*}_{{{:.*}}}",
            decimals,
            self.mean * scale,
            decimals,
            self.std * scale
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub folds: usize,
    pub labels: Vec<Label>,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    pub accuracy: MeanStd,
    pub invalid_rate: MeanStd,
    /// Per-label (precision, recall, f1).
    pub per_label: BTreeMap<Label, [MeanStd; 3]>,
}

pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<AggregateReport, EvalError> {
    let first = reports.first().ok_or(EvalError::Empty)?;
    let collect = |f: &dyn Fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let labels: Vec<Label> = first.per_label.iter().map(|m| m.label).collect();
    let mut per_label = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        let pick = |g: fn(&LabelMetrics) -> f64| {
            MeanStd::of(
                &reports
                    .iter()
                    .filter_map(|r| r.per_label.get(i).filter(|m| m.label == label).map(g))
                    .collect::<Vec<_>>(),
            )
        };
        per_label.insert(label, [pick(|m| m.precision), pick(|m| m.recall), pick(|m| m.f1)]);
    }
    Ok(AggregateReport {
        folds: reports.len(),
        labels,
        macro_precision: collect(&|r| r.macro_precision),
        macro_recall: collect(&|r| r.macro_recall),
        macro_f1: collect(&|r| r.macro_f1),
        accuracy: collect(&|r| r.accuracy),
        invalid_rate: collect(&|r| r.invalid_rate),
        per_label,
    })
}

impl AggregateReport {
    /// Aligned text: one row per label (P., R., F1) then the overall row
    /// (P., R., F1, Acc.) and the invalid rate.
    pub fn render_table(&self, decimals: usize, percent: bool) -> String {
        let cell = |m: &MeanStd| m.render(decimals, percent);
        let width = decimals * 2 + 10;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16}{:>w$}{:>w$}{:>w$}{:>w$}",
            "",
            "P.",
            "R.",
            "F1",
            "Acc.",
            w = width
        );
        for label in &self.labels {
            let [p, r, f] = &self.per_label[label];
            let _ = writeln!(out, "{:<16}{:>w$}{:>w$}{:>w$}", label.name(), cell(p), cell(r), cell(f), w = width);
        }
        let _ = writeln!(
            out,
            "{:<16}{:>w$}{:>w$}{:>w$}{:>w$}",
            "Overall",
            cell(&self.macro_precision),
            cell(&self.macro_recall),
            cell(&self.macro_f1),
            cell(&self.accuracy),
            w = width
        );
        let _ = writeln!(out, "{:<16}{:>w$}", "Invalid rate", cell(&self.invalid_rate), w = width);
        let _ = writeln!(out, "folds: {}", self.folds);
        out
    }
}
