//! Distinguishing unigrams and bigrams per category via log-odds ratios with
//! an informative Dirichlet prior, standardized by their approximate variance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LexError {
    #[error("alpha0 must be positive, got {0}")]
    NonPositivePrior(f64),
    #[error("non-positive log-odds denominator for {ngram:?}")]
    NumericalDomain { ngram: String },
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// Unicode-whitespace split with edge punctuation stripped, lowercased.
    #[default]
    Whitespace,
    /// Character units for unsegmented scripts.
    CharNgram,
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "whitespace" => Ok(TokenizerMode::Whitespace),
            "char_ngram" | "char" => Ok(TokenizerMode::CharNgram),
            other => Err(format!("unknown tokenizer {other:?} (expected whitespace or char_ngram)")),
        }
    }
}

/// Splits text into runs of tokens; bigrams never cross a run boundary.
fn token_runs(text: &str, mode: TokenizerMode) -> Vec<Vec<String>> {
    match mode {
        TokenizerMode::Whitespace => {
            let tokens: Vec<String> = text
                .split_whitespace()
                .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
                .filter(|w| !w.is_empty())
                .collect();
            vec![tokens]
        }
        TokenizerMode::CharNgram => {
            let mut runs = Vec::new();
            let mut run = Vec::new();
            for c in text.chars() {
                if c.is_alphanumeric() {
                    run.extend(c.to_lowercase().map(String::from));
                } else if !run.is_empty() {
                    runs.push(std::mem::take(&mut run));
                }
            }
            if !run.is_empty() {
                runs.push(run);
            }
            runs
        }
    }
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    token_runs(text, mode).into_iter().flatten().collect()
}

/// Unigrams followed by bigrams. Word bigrams are space-joined, character
/// bigrams are concatenated.
pub fn ngrams(text: &str, mode: TokenizerMode) -> Vec<String> {
    let runs = token_runs(text, mode);
    let sep = match mode {
        TokenizerMode::Whitespace => " ",
        TokenizerMode::CharNgram => "",
    };
    let mut out: Vec<String> = runs.iter().flatten().cloned().collect();
    for run in &runs {
        out.extend(run.windows(2).map(|w| format!("{}{sep}{}", w[0], w[1])));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub vocabulary: Vec<String>,
    pub groups: Vec<String>,
    pub counts: Vec<BTreeMap<String, u64>>,
    pub totals: Vec<u64>,
    pub background: BTreeMap<String, u64>,
    pub background_total: u64,
}

impl CountTable {
    pub fn from_counts(groups: Vec<(String, BTreeMap<String, u64>)>) -> Result<Self, LexError> {
        if groups.len() < 2 {
            return Err(LexError::TooFewGroups(groups.len()));
        }
        let mut background: BTreeMap<String, u64> = BTreeMap::new();
        let mut names = Vec::new();
        let mut counts = Vec::new();
        let mut totals = Vec::new();
        for (name, c) in groups {
            for (w, n) in &c {
                *background.entry(w.clone()).or_default() += n;
            }
            totals.push(c.values().sum());
            names.push(name);
            counts.push(c);
        }
        Ok(CountTable {
            vocabulary: background.keys().cloned().collect(),
            background_total: background.values().sum(),
            groups: names,
            counts,
            totals,
            background,
        })
    }

    pub fn group_index(&self, name: &str) -> Result<usize, LexError> {
        self.groups
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| LexError::UnknownGroup(name.to_string()))
    }

    pub fn count(&self, group: usize, ngram: &str) -> u64 {
        self.counts[group].get(ngram).copied().unwrap_or(0)
    }
}

/// Counts unigrams and bigrams per group of texts.
pub fn ngram_counts<S: AsRef<str>>(groups: &[(String, Vec<S>)], mode: TokenizerMode) -> Result<CountTable, LexError> {
    let counted = groups
        .iter()
        .map(|(name, texts)| {
            let mut c: BTreeMap<String, u64> = BTreeMap::new();
            for t in texts {
                for g in ngrams(t.as_ref(), mode) {
                    *c.entry(g).or_default() += 1;
                }
            }
            (name.clone(), c)
        })
        .collect();
    CountTable::from_counts(counted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexScore {
    pub ngram: String,
    pub delta: f64,
    pub variance: f64,
    pub z: f64,
}

/// Log-odds difference, its approximate variance and z for one n-gram.
pub fn log_odds_term(y_i: f64, n_i: f64, y_j: f64, n_j: f64, alpha_w: f64, alpha0: f64) -> Option<(f64, f64, f64)> {
    let num_i = y_i + alpha_w;
    let den_i = n_i + alpha0 - y_i - alpha_w;
    let num_j = y_j + alpha_w;
    let den_j = n_j + alpha0 - y_j - alpha_w;
    if num_i <= 0.0 || den_i <= 0.0 || num_j <= 0.0 || den_j <= 0.0 {
        return None;
    }
    let delta = (num_i / den_i).ln() - (num_j / den_j).ln();
    let variance = 1.0 / num_i + 1.0 / num_j;
    Some((delta, variance, delta / variance.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogOddsConfig {
    pub alpha0: f64,
    /// N-grams whose background count is below this are not ranked.
    pub min_count: u64,
}

impl Default for LogOddsConfig {
    fn default() -> Self {
        LogOddsConfig { alpha0: 500.0, min_count: 3 }
    }
}

fn rank(scores: &mut [LexScore]) {
    scores.sort_by(|a, b| b.z.total_cmp(&a.z).then_with(|| a.ngram.cmp(&b.ngram)));
}

/// Scores `target` against an explicit `rest` set of groups.
pub fn log_odds_z(
    table: &CountTable,
    target: usize,
    rest: &BTreeSet<usize>,
    config: &LogOddsConfig,
) -> Result<Vec<LexScore>, LexError> {
    if !(config.alpha0 > 0.0) {
        return Err(LexError::NonPositivePrior(config.alpha0));
    }
    let n_i = table.totals[target] as f64;
    let n_j: f64 = rest.iter().map(|&g| table.totals[g] as f64).sum();
    let b_total = table.background_total as f64;
    let mut scores = Vec::new();
    for (w, &b) in &table.background {
        if b < config.min_count {
            continue;
        }
        let y_i = table.count(target, w) as f64;
        let y_j: f64 = rest.iter().map(|&g| table.count(g, w) as f64).sum();
        let alpha_w = config.alpha0 * b as f64 / b_total;
        let (delta, variance, z) = log_odds_term(y_i, n_i, y_j, n_j, alpha_w, config.alpha0)
            .ok_or_else(|| LexError::NumericalDomain { ngram: w.clone() })?;
        scores.push(LexScore { ngram: w.clone(), delta, variance, z });
    }
    rank(&mut scores);
    Ok(scores)
}

/// Category against the union of every other category.
pub fn one_vs_rest(table: &CountTable, target: usize, config: &LogOddsConfig) -> Result<Vec<LexScore>, LexError> {
    let rest: BTreeSet<usize> = (0..table.groups.len()).filter(|&g| g != target).collect();
    log_odds_z(table, target, &rest, config)
}

/// The `k` highest-z entries; ties go to the lexicographically smaller n-gram.
pub fn top_features(scores: &[LexScore], k: usize) -> Vec<LexScore> {
    let mut sorted = scores.to_vec();
    rank(&mut sorted);
    sorted.truncate(k.max(1));
    sorted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFeatures {
    pub category: String,
    pub features: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexReport {
    pub config: LogOddsConfig,
    pub tokenizer: TokenizerMode,
    pub categories: Vec<CategoryFeatures>,
}

/// One-vs-rest top-k features for every group, z rounded to 2 decimals.
pub fn lexical_report(
    table: &CountTable,
    tokenizer: TokenizerMode,
    config: &LogOddsConfig,
    k: usize,
) -> Result<LexReport, LexError> {
    let mut categories = Vec::new();
    for (g, name) in table.groups.iter().enumerate() {
        let top = top_features(&one_vs_rest(table, g, config)?, k);
        categories.push(CategoryFeatures {
            category: name.clone(),
            features: top
                .into_iter()
                .map(|s| (s.ngram, crate::stats::round_to(s.z, 2)))
                .collect(),
        });
    }
    Ok(LexReport { config: *config, tokenizer, categories })
}

impl LexReport {
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "# alpha0={} min_count={} tokenizer={:?}\n",
            self.config.alpha0, self.config.min_count, self.tokenizer
        );
        for c in &self.categories {
            let cells: Vec<String> = c.features.iter().map(|(w, z)| format!("{w} ({z:.2})")).collect();
            out.push_str(&format!("{:<16}{}\n", c.category, cells.join(", ")));
        }
        out
    }
}
