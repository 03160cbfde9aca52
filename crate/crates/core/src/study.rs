//! Analysis of the counselor feedback study: per-phase response scores, the
//! 2 (group) x 2 (phase) mixed ANOVA, effect sizes and the post-phase t-test.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{f_survival, mean, sample_std, sample_variance, student_t_two_sided};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyError {
    #[error("rating {0} outside the allowed range")]
    OutOfRange(f64),
    #[error("no ratings given")]
    Empty,
    #[error("need at least 2 participants per group (control {control}, experimental {experimental})")]
    TooFewParticipants { control: usize, experimental: usize },
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero variance; statistic undefined")]
    DegenerateVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Control,
    Experimental,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Control => "control",
            Group::Experimental => "experimental",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantScores {
    pub participant_id: String,
    pub group: Group,
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyDataset {
    pub participants: Vec<ParticipantScores>,
}

impl StudyDataset {
    pub fn group(&self, g: Group) -> impl Iterator<Item = &ParticipantScores> {
        self.participants.iter().filter(move |p| p.group == g)
    }
}

/// Mean of per-scenario ratings on the -1 / 0 / 1 scale.
pub fn phase_score(ratings: &[i8]) -> Result<f64, StudyError> {
    if ratings.is_empty() {
        return Err(StudyError::Empty);
    }
    if let Some(&bad) = ratings.iter().find(|r| !(-1..=1).contains(*r)) {
        return Err(StudyError::OutOfRange(bad as f64));
    }
    Ok(ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaEffect {
    pub ss: f64,
    pub df: f64,
    pub ms: f64,
    /// `None` when the matching error term is zero; see `degenerate`.
    pub f: Option<f64>,
    pub p: f64,
    pub partial_eta_sq: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTerm {
    pub ss: f64,
    pub df: f64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    pub n_control: usize,
    pub n_experimental: usize,
    pub grand_mean: f64,
    pub ss_total: f64,
    pub ss_between_subjects: f64,
    pub ss_within_subjects: f64,
    pub group: AnovaEffect,
    pub error_between: ErrorTerm,
    pub phase: AnovaEffect,
    pub interaction: AnovaEffect,
    pub error_within: ErrorTerm,
}

fn effect(ss: f64, df: f64, err: &ErrorTerm) -> AnovaEffect {
    let ms = ss / df;
    let eta = if ss + err.ss == 0.0 { 0.0 } else { ss / (ss + err.ss) };
    if err.ms <= 0.0 {
        // Perfect fit: F is unbounded. A zero effect stays at F = 0.
        let (f, p) = if ss > 0.0 { (None, 0.0) } else { (Some(0.0), 1.0) };
        return AnovaEffect { ss, df, ms, f, p, partial_eta_sq: eta, degenerate: true };
    }
    let f = ms / err.ms;
    AnovaEffect {
        ss,
        df,
        ms,
        f: Some(f),
        p: f_survival(f, df, err.df),
        partial_eta_sq: eta,
        degenerate: false,
    }
}

/// Clamps round-off below zero (sums of squares can come out at -1e-16).
fn nonneg(x: f64) -> f64 {
    if x < 0.0 && x > -1e-9 {
        0.0
    } else {
        x
    }
}

pub fn mixed_anova_2x2(data: &StudyDataset) -> Result<AnovaReport, StudyError> {
    let control: Vec<&ParticipantScores> = data.group(Group::Control).collect();
    let experimental: Vec<&ParticipantScores> = data.group(Group::Experimental).collect();
    if control.len() < 2 || experimental.len() < 2 {
        return Err(StudyError::TooFewParticipants {
            control: control.len(),
            experimental: experimental.len(),
        });
    }
    let n = data.participants.len() as f64;
    let all: Vec<f64> = data.participants.iter().flat_map(|p| [p.pre, p.post]).collect();
    let gm = mean(&all);
    let ss_total: f64 = all.iter().map(|x| (x - gm).powi(2)).sum();
    let ss_subjects = 2.0
        * data
            .participants
            .iter()
            .map(|p| ((p.pre + p.post) / 2.0 - gm).powi(2))
            .sum::<f64>();

    let pre_mean = data.participants.iter().map(|p| p.pre).sum::<f64>() / n;
    let post_mean = data.participants.iter().map(|p| p.post).sum::<f64>() / n;

    let mut ss_group = 0.0;
    let mut ss_interaction = 0.0;
    for members in [&control, &experimental] {
        let ng = members.len() as f64;
        let cell_pre = members.iter().map(|p| p.pre).sum::<f64>() / ng;
        let cell_post = members.iter().map(|p| p.post).sum::<f64>() / ng;
        let group_mean = (cell_pre + cell_post) / 2.0;
        ss_group += 2.0 * ng * (group_mean - gm).powi(2);
        ss_interaction += ng * (cell_pre - group_mean - pre_mean + gm).powi(2);
        ss_interaction += ng * (cell_post - group_mean - post_mean + gm).powi(2);
    }
    let ss_phase = n * ((pre_mean - gm).powi(2) + (post_mean - gm).powi(2));
    let ss_within = nonneg(ss_total - ss_subjects);
    let ss_error_between = nonneg(ss_subjects - ss_group);
    let ss_error_within = nonneg(ss_within - ss_phase - ss_interaction);

    let df_err = n - 2.0;
    let error_between = ErrorTerm { ss: ss_error_between, df: df_err, ms: ss_error_between / df_err };
    let error_within = ErrorTerm { ss: ss_error_within, df: df_err, ms: ss_error_within / df_err };
    Ok(AnovaReport {
        n_control: control.len(),
        n_experimental: experimental.len(),
        grand_mean: gm,
        ss_total,
        ss_between_subjects: ss_subjects,
        ss_within_subjects: ss_within,
        group: effect(ss_group, 1.0, &error_between),
        error_between,
        phase: effect(ss_phase, 1.0, &error_within),
        interaction: effect(ss_interaction, 1.0, &error_within),
        error_within,
    })
}

impl AnovaReport {
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<16}{:>12}{:>6}{:>12}{:>10}{:>10}{:>10}\n",
            "Source", "SS", "df", "MS", "F", "p", "eta_p^2"
        );
        let eff = |out: &mut String, name: &str, e: &AnovaEffect| {
            let f = e.f.map(|f| format!("{f:.4}")).unwrap_or_else(|| "inf".into());
            let _ = writeln!(
                out,
                "{name:<16}{:>12.4}{:>6}{:>12.4}{f:>10}{:>10.4}{:>10.4}",
                e.ss, e.df, e.ms, e.p, e.partial_eta_sq
            );
        };
        let err = |out: &mut String, name: &str, e: &ErrorTerm| {
            let _ = writeln!(out, "{name:<16}{:>12.4}{:>6}{:>12.4}", e.ss, e.df, e.ms);
        };
        eff(&mut out, "Group", &self.group);
        err(&mut out, "Error(between)", &self.error_between);
        eff(&mut out, "Phase", &self.phase);
        eff(&mut out, "Group x Phase", &self.interaction);
        err(&mut out, "Error(within)", &self.error_within);
        let _ = writeln!(out, "n = {} control, {} experimental", self.n_control, self.n_experimental);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSizeMode {
    /// Mean change over the average of the two sample sds.
    Paired,
    /// Standardized change using the sd of the paired differences.
    PairedDifference,
    /// Mean difference over the pooled sample sd.
    Independent,
}

fn pooled_variance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0)
}

pub fn cohens_d(mode: EffectSizeMode, a: &[f64], b: &[f64]) -> Result<f64, StudyError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StudyError::TooFewParticipants { control: a.len(), experimental: b.len() });
    }
    let (num, den) = match mode {
        EffectSizeMode::Paired => {
            if a.len() != b.len() {
                return Err(StudyError::LengthMismatch(a.len(), b.len()));
            }
            (mean(b) - mean(a), (sample_std(a) + sample_std(b)) / 2.0)
        }
        EffectSizeMode::PairedDifference => {
            if a.len() != b.len() {
                return Err(StudyError::LengthMismatch(a.len(), b.len()));
            }
            let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
            (mean(&diffs), sample_std(&diffs))
        }
        EffectSizeMode::Independent => (mean(a) - mean(b), pooled_variance(a, b).sqrt()),
    };
    if num == 0.0 && den == 0.0 {
        return Ok(0.0);
    }
    if den == 0.0 {
        return Err(StudyError::DegenerateVariance);
    }
    Ok(num / den)
}

/// Equal-variance two-sample t-test: (t, df, two-sided p).
pub fn t_test_independent(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64), StudyError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StudyError::TooFewParticipants { control: a.len(), experimental: b.len() });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let diff = mean(a) - mean(b);
    let se = (pooled_variance(a, b) * (1.0 / na + 1.0 / nb)).sqrt();
    let df = na + nb - 2.0;
    if se == 0.0 {
        if diff == 0.0 {
            return Ok((0.0, df, 1.0));
        }
        return Err(StudyError::DegenerateVariance);
    }
    let t = diff / se;
    Ok((t, df, student_t_two_sided(t, df)))
}

/// Mean of 1-5 Likert ratings.
pub fn likert_mean(ratings: &[u8]) -> Result<f64, StudyError> {
    if ratings.is_empty() {
        return Err(StudyError::Empty);
    }
    if let Some(&bad) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
        return Err(StudyError::OutOfRange(bad as f64));
    }
    Ok(ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelpfulnessRating {
    pub recognizing: u8,
    pub managing: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelpfulnessSummary {
    pub n: usize,
    pub recognizing: f64,
    pub managing: f64,
}

pub fn helpfulness_summary(ratings: &[HelpfulnessRating]) -> Result<HelpfulnessSummary, StudyError> {
    let rec: Vec<u8> = ratings.iter().map(|r| r.recognizing).collect();
    let man: Vec<u8> = ratings.iter().map(|r| r.managing).collect();
    Ok(HelpfulnessSummary {
        n: ratings.len(),
        recognizing: likert_mean(&rec)?,
        managing: likert_mean(&man)?,
    })
}

/// ANOVA plus the follow-up effect sizes and post-phase comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyAnalysis {
    pub anova: AnovaReport,
    pub d_experimental_pre_post: Option<f64>,
    pub d_control_pre_post: Option<f64>,
    pub d_post_between: Option<f64>,
    pub post_t: Option<f64>,
    pub post_df: Option<f64>,
    pub post_p: Option<f64>,
}

pub fn analyze(data: &StudyDataset, paired_mode: EffectSizeMode) -> Result<StudyAnalysis, StudyError> {
    let anova = mixed_anova_2x2(data)?;
    let phase = |g: Group| -> (Vec<f64>, Vec<f64>) { data.group(g).map(|p| (p.pre, p.post)).unzip() };
    let (c_pre, c_post) = phase(Group::Control);
    let (e_pre, e_post) = phase(Group::Experimental);
    let t = t_test_independent(&e_post, &c_post).ok();
    Ok(StudyAnalysis {
        anova,
        d_experimental_pre_post: cohens_d(paired_mode, &e_pre, &e_post).ok(),
        d_control_pre_post: cohens_d(paired_mode, &c_pre, &c_post).ok(),
        d_post_between: cohens_d(EffectSizeMode::Independent, &e_post, &c_post).ok(),
        post_t: t.map(|x| x.0),
        post_df: t.map(|x| x.1),
        post_p: t.map(|x| x.2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn worked_dataset() -> StudyDataset {
        let p = |id: &str, group, pre, post| ParticipantScores { participant_id: id.into(), group, pre, post };
        StudyDataset {
            participants: vec![
                p("c1", Group::Control, 1.0, 2.0),
                p("c2", Group::Control, 3.0, 2.0),
                p("e1", Group::Experimental, 2.0, 5.0),
                p("e2", Group::Experimental, 2.0, 7.0),
            ],
        }
    }

    #[test]
    fn phase_scores() {
        assert_eq!(phase_score(&[1, 0, 1, -1]).unwrap(), 0.25);
        assert_eq!(phase_score(&[1; 30]).unwrap(), 1.0);
        assert_eq!(phase_score(&[-1, -1]).unwrap(), -1.0);
        assert_eq!(phase_score(&[2]), Err(StudyError::OutOfRange(2.0)));
        assert_eq!(phase_score(&[]), Err(StudyError::Empty));
    }

    #[test]
    fn worked_anova() {
        let r = mixed_anova_2x2(&worked_dataset()).unwrap();
        assert!((r.ss_total - 28.0).abs() < 1e-12);
        assert!((r.ss_between_subjects - 10.0).abs() < 1e-12);
        assert!((r.group.ss - 8.0).abs() < 1e-12);
        assert!((r.error_between.ss - 2.0).abs() < 1e-12);
        assert!((r.phase.ss - 8.0).abs() < 1e-12);
        assert!((r.interaction.ss - 8.0).abs() < 1e-12);
        assert!((r.error_within.ss - 2.0).abs() < 1e-12);
        assert!((r.interaction.f.unwrap() - 8.0).abs() < 1e-12);
        assert!((r.interaction.partial_eta_sq - 0.8).abs() < 1e-12);
        let closed = 1.0 - (8.0f64 / 10.0).sqrt();
        assert!((r.interaction.p - closed).abs() < 1e-12);
        assert!((r.interaction.p - 0.1056).abs() < 1e-4);
    }

    #[test]
    fn null_data() {
        let p = |id: &str, group| ParticipantScores { participant_id: id.into(), group, pre: 0.5, post: 0.5 };
        let d = StudyDataset {
            participants: vec![p("a", Group::Control), p("b", Group::Control), p("c", Group::Experimental), p("d", Group::Experimental)],
        };
        let r = mixed_anova_2x2(&d).unwrap();
        assert_eq!((r.group.ss, r.phase.ss, r.interaction.ss), (0.0, 0.0, 0.0));
        assert!(r.interaction.degenerate);
        assert_eq!(r.interaction.p, 1.0);
    }

    #[test]
    fn perfect_fit_is_flagged() {
        let p = |id: &str, group, pre, post| ParticipantScores { participant_id: id.into(), group, pre, post };
        let d = StudyDataset {
            participants: vec![
                p("a", Group::Control, 0.0, 0.0),
                p("b", Group::Control, 0.0, 0.0),
                p("c", Group::Experimental, 0.0, 1.0),
                p("d", Group::Experimental, 0.0, 1.0),
            ],
        };
        let r = mixed_anova_2x2(&d).unwrap();
        assert!(r.interaction.degenerate);
        assert_eq!(r.interaction.f, None);
        assert_eq!(r.interaction.p, 0.0);
    }

    #[test]
    fn too_few() {
        let mut d = worked_dataset();
        d.participants.pop();
        assert!(matches!(mixed_anova_2x2(&d), Err(StudyError::TooFewParticipants { control: 2, experimental: 1 })));
    }

    #[test]
    fn effect_sizes() {
        assert_eq!(cohens_d(EffectSizeMode::Independent, &[5.0, 7.0], &[2.0, 2.0]).unwrap(), 3.0 / 1.0 + 1.0);
        assert_eq!(cohens_d(EffectSizeMode::Paired, &[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), 0.0);
        assert_eq!(
            cohens_d(EffectSizeMode::Independent, &[1.0, 1.0], &[2.0, 2.0]),
            Err(StudyError::DegenerateVariance)
        );
        // d_av on (2,2)->(5,7): mean change 4, sds 0 and sqrt(2)
        let d = cohens_d(EffectSizeMode::Paired, &[2.0, 2.0], &[5.0, 7.0]).unwrap();
        assert!((d - 4.0 / (2.0f64.sqrt() / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn t_test_examples() {
        let (t, df, p) = t_test_independent(&[2.0, 2.0], &[5.0, 7.0]).unwrap();
        assert_eq!((t, df), (-4.0, 2.0));
        let closed = 2.0 * 0.5 * (1.0 - 4.0 / 18.0f64.sqrt());
        assert!((p - closed).abs() < 1e-12);
        assert!((p - 0.0572).abs() < 1e-4);
        let (t2, _, p2) = t_test_independent(&[5.0, 7.0], &[2.0, 2.0]).unwrap();
        assert_eq!((t2, p2), (4.0, p));
        let (t0, _, p0) = t_test_independent(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((t0, p0), (0.0, 1.0));
    }

    #[test]
    fn helpfulness() {
        let h = helpfulness_summary(&[
            HelpfulnessRating { recognizing: 4, managing: 3 },
            HelpfulnessRating { recognizing: 5, managing: 3 },
        ])
        .unwrap();
        assert_eq!((h.recognizing, h.managing), (4.5, 3.0));
        assert_eq!(likert_mean(&[3]).unwrap(), 3.0);
        assert_eq!(likert_mean(&[6]), Err(StudyError::OutOfRange(6.0)));
    }
}
