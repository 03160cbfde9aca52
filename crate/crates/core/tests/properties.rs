use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use resistkit_core::alliance::{pearson, pearson_p_value, session_profile};
use resistkit_core::corpus::{
    adjudicate, cohen_kappa, corpus_stats, load_sessions, synthetic, write_jsonl, AnnotationRecord, Sample, Session,
    Speaker, Turn, Utterance, Verdict,
};
use resistkit_core::evaluation::{
    classification_metrics, collapse_to_binary, confusion, stratified_kfold,
};
use resistkit_core::lexstats::{log_odds_term, log_odds_z, one_vs_rest, CountTable, LogOddsConfig};
use resistkit_core::prompting::{build_prompt, permitted_label_strings, PromptSpec, ShotMode};
use resistkit_core::study::{mixed_anova_2x2, phase_score, Group, ParticipantScores, StudyDataset};
use resistkit_core::taxonomy::{normalize_label, AliasTable, Label, LabelSpace, PredictedLabel, Task};

fn any_label() -> impl Strategy<Value = Label> {
    prop::sample::select(Label::ANNOTATION.to_vec())
}

fn any_prediction() -> impl Strategy<Value = PredictedLabel> {
    prop_oneof![
        6 => any_label().prop_map(PredictedLabel::Label),
        1 => Just(PredictedLabel::Invalid),
    ]
}

fn scramble_case(s: &str, mask: u64) -> String {
    s.chars()
        .enumerate()
        .map(|(i, c)| if mask >> (i % 64) & 1 == 1 { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect()
}

proptest! {
    #[test]
    fn label_spellings_round_trip(label in any_label(), mask: u64, pad in 0usize..3) {
        let space = " ".repeat(pad);
        let table = AliasTable::global();
        for alias in [label.name(), label.prompt_string()].into_iter().chain(table.aliases_of(label)) {
            let raw = format!("{space}{}{space}", scramble_case(alias, mask));
            prop_assert_eq!(table.resolve(&raw, LabelSpace::Annotation).unwrap(), label);
        }
        if label.is_fine() {
            prop_assert_eq!(normalize_label(label.prompt_string(), Task::Fine).unwrap(), label);
            prop_assert_eq!(normalize_label(label.prompt_string(), Task::Binary).is_err(), true);
        }
    }

    #[test]
    fn folds_partition_and_stratify(labels in prop::collection::vec(0u8..14, 10..200), k in prop::sample::select(vec![2usize, 5]), seed: u64) {
        let items: Vec<(String, u8)> = labels.iter().enumerate().map(|(i, &l)| (format!("x{i}"), l)).collect();
        let fa = stratified_kfold(&items, k, seed).unwrap();
        prop_assert_eq!(fa.folds.len(), items.len());
        for (id, _) in &items {
            prop_assert!(fa.folds[id] < k);
        }
        let mut per: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (id, l) in &items {
            per.entry(*l).or_insert_with(|| vec![0; k])[fa.folds[id]] += 1;
        }
        for counts in per.values() {
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(stratified_kfold(&items, k, seed).unwrap(), fa);
    }

    #[test]
    fn metrics_match_brute_force(pairs in prop::collection::vec((any_label(), any_prediction()), 1..80)) {
        let labels = Label::ANNOTATION.to_vec();
        let gold: Vec<(String, Label)> = pairs.iter().enumerate().map(|(i, (g, _))| (format!("s{i}"), *g)).collect();
        let preds: HashMap<String, PredictedLabel> = pairs.iter().enumerate().map(|(i, (_, p))| (format!("s{i}"), *p)).collect();
        let report = classification_metrics(&confusion(&gold, &preds, &labels).unwrap()).unwrap();
        let mut f1_sum = 0.0;
        for m in &report.per_label {
            let l = m.label;
            let tp = pairs.iter().filter(|(g, p)| *g == l && *p == PredictedLabel::Label(l)).count() as f64;
            let fp = pairs.iter().filter(|(g, p)| *g != l && *p == PredictedLabel::Label(l)).count() as f64;
            let fne = pairs.iter().filter(|(g, p)| *g == l && *p != PredictedLabel::Label(l)).count() as f64;
            let prec = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let rec = if tp + fne == 0.0 { 0.0 } else { tp / (tp + fne) };
            let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
            prop_assert!((m.precision - prec).abs() < 1e-12);
            prop_assert!((m.recall - rec).abs() < 1e-12);
            prop_assert!((m.f1 - f1).abs() < 1e-12);
            f1_sum += f1;
        }
        prop_assert!((report.macro_f1 - f1_sum / labels.len() as f64).abs() < 1e-12);
        let correct = pairs.iter().filter(|(g, p)| PredictedLabel::Label(*g) == *p).count() as f64;
        prop_assert!((report.accuracy - correct / pairs.len() as f64).abs() < 1e-12);
        let invalid = pairs.iter().filter(|(_, p)| !p.is_valid()).count() as f64;
        prop_assert!((report.invalid_rate - invalid / pairs.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn micro_scores_equal_accuracy(pairs in prop::collection::vec((any_label(), any_label()), 1..80)) {
        let labels = Label::ANNOTATION.to_vec();
        let gold: Vec<(String, Label)> = pairs.iter().enumerate().map(|(i, (g, _))| (format!("s{i}"), *g)).collect();
        let preds: HashMap<String, PredictedLabel> = pairs.iter().enumerate().map(|(i, (_, p))| (format!("s{i}"), (*p).into())).collect();
        let cm = confusion(&gold, &preds, &labels).unwrap();
        let tp: u64 = (0..labels.len()).map(|i| cm.counts[i][i]).sum();
        let predicted: u64 = cm.counts.iter().flatten().sum();
        let support: u64 = cm.total();
        let report = classification_metrics(&cm).unwrap();
        prop_assert_eq!(tp as f64 / predicted as f64, report.accuracy);
        prop_assert_eq!(tp as f64 / support as f64, report.accuracy);
    }

    #[test]
    fn collapse_commutes_with_confusion(pairs in prop::collection::vec((any_label(), any_prediction()), 1..80)) {
        let gold: Vec<(String, Label)> = pairs.iter().enumerate().map(|(i, (g, _))| (format!("s{i}"), *g)).collect();
        let preds: HashMap<String, PredictedLabel> = pairs.iter().enumerate().map(|(i, (_, p))| (format!("s{i}"), *p)).collect();
        let binary_gold: Vec<(String, Label)> = gold.iter().map(|(id, g)| (id.clone(), g.to_binary())).collect();
        let via_collapse = classification_metrics(&confusion(&binary_gold, &collapse_to_binary(&preds), &Label::BINARY).unwrap()).unwrap();
        // direct path: build the binary matrix from the raw pairs
        let mut direct_preds = HashMap::new();
        for (i, (_, p)) in pairs.iter().enumerate() {
            let b = match p {
                PredictedLabel::Invalid => PredictedLabel::Invalid,
                PredictedLabel::Label(Label::Collaboration) => Label::Collaboration.into(),
                PredictedLabel::Label(_) => Label::Resistance.into(),
            };
            direct_preds.insert(format!("s{i}"), b);
        }
        let direct = classification_metrics(&confusion(&binary_gold, &direct_preds, &Label::BINARY).unwrap()).unwrap();
        prop_assert_eq!(via_collapse, direct);
    }

    #[test]
    fn kappa_bounds(pairs in prop::collection::vec((any_label(), any_label()), 2..60)) {
        let (a, b): (Vec<Label>, Vec<Label>) = pairs.into_iter().unzip();
        if let Ok(rep) = cohen_kappa(&a, &b, &Label::ANNOTATION) {
            prop_assert!(rep.overall_kappa >= -1.0 - 1e-12 && rep.overall_kappa <= 1.0 + 1e-12);
            for k in rep.per_category_kappa.values().flatten() {
                prop_assert!(*k >= -1.0 - 1e-12 && *k <= 1.0 + 1e-12);
            }
        }
        if a.iter().collect::<BTreeSet<_>>().len() > 1 {
            prop_assert_eq!(cohen_kappa(&a, &a, &Label::ANNOTATION).unwrap().overall_kappa, 1.0);
        }
    }

    #[test]
    fn adjudication_picks_a_top_vote(votes in prop::collection::vec(any_label(), 2..7)) {
        let records: Vec<AnnotationRecord> = votes.iter().enumerate().map(|(i, &l)| AnnotationRecord {
            sample_id: "s:1".into(),
            annotator_id: format!("a{i}"),
            label: l,
            rationale: "r".into(),
            extra: Default::default(),
        }).collect();
        let adj = adjudicate(&records).unwrap();
        if let Verdict::Final(l) = adj.verdict {
            let mine = adj.votes[&l];
            prop_assert!(adj.votes.values().all(|&n| n <= mine));
        }
    }

    #[test]
    fn corpus_totals_add_up(counts in prop::collection::vec(0usize..30, 14)) {
        let pairs: Vec<(Label, usize)> = Label::ANNOTATION.iter().copied().zip(counts.iter().copied()).collect();
        let stats = corpus_stats(&synthetic::samples_with_counts(&pairs, 5));
        let fine: usize = Label::FINE.iter().map(|l| stats.per_label[l].count).sum();
        prop_assert_eq!(fine, stats.resistance.count);
        prop_assert_eq!(stats.resistance.count + stats.collaboration.count, stats.total.count);
    }

    #[test]
    fn session_ingest_is_lossless(turns in prop::collection::vec(("[a-zA-Z ,.!?']{1,40}", any::<bool>()), 1..12), note in "[a-z]{0,8}") {
        let utterances: Vec<Utterance> = turns.iter().enumerate().map(|(i, (text, client))| Utterance {
            index: i,
            speaker: if *client { Speaker::Client } else { Speaker::Counselor },
            text: format!("x{text}"),
            extra: Default::default(),
        }).collect();
        let mut extra = serde_json::Map::new();
        extra.insert("note".into(), serde_json::Value::String(note));
        let sessions = vec![Session { session_id: "s1".into(), utterances, alliance: None, extra }];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &sessions).unwrap();
        let loaded = load_sessions(buf.as_slice()).unwrap();
        prop_assert_eq!(&loaded, &sessions);
        let mut again = Vec::new();
        write_jsonl(&mut again, &loaded).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn prompts_never_leak_gold(label in any_label(), secret in "[A-Z]{12}", few: bool) {
        let sample = Sample {
            sample_id: "s:3".into(),
            history: vec![Turn { speaker: Speaker::Counselor, text: "How has the week been?".into() }],
            response: "Fine I guess.".into(),
            gold: Some(label),
            rationale: Some(secret.clone()),
            extra: Default::default(),
        };
        let task = if label.is_fine() { Task::Fine } else { Task::Binary };
        let exemplars = if few {
            let training = synthetic::samples_with_counts(&Label::ANNOTATION.map(|l| (l, 2)), 4);
            Some(resistkit_core::prompting::sample_exemplars(&training, task, 1).unwrap())
        } else {
            None
        };
        let spec = PromptSpec { task, shot_mode: if few { ShotMode::Few } else { ShotMode::Zero }, exemplars: exemplars.as_ref(), sample: &sample };
        let with_gold = build_prompt(&spec).unwrap();
        let blind = Sample { gold: None, rationale: None, ..sample.clone() };
        let without = build_prompt(&PromptSpec { sample: &blind, ..spec }).unwrap();
        prop_assert!(!with_gold.text().contains(&secret));
        prop_assert_eq!(with_gold, without);
    }

    #[test]
    fn log_odds_antisymmetric(counts in prop::collection::vec(prop::collection::vec(0u64..12, 6), 2..5), alpha0 in 0.5f64..600.0) {
        let groups: Vec<(String, BTreeMap<String, u64>)> = counts.iter().enumerate().map(|(g, row)| {
            (format!("g{g}"), row.iter().enumerate().filter(|(_, &c)| c > 0).map(|(w, &c)| (format!("w{w}"), c)).collect())
        }).collect();
        let Ok(table) = CountTable::from_counts(groups) else { return Ok(()) };
        if table.totals.iter().any(|&t| t == 0) {
            return Ok(());
        }
        let cfg = LogOddsConfig { alpha0, min_count: 0 };
        // a single-word vocabulary leaves no mass outside the word
        prop_assume!(table.vocabulary.len() > 1);
        let ij = log_odds_z(&table, 0, &BTreeSet::from([1]), &cfg).unwrap();
        let ji = log_odds_z(&table, 1, &BTreeSet::from([0]), &cfg).unwrap();
        let ji: HashMap<&str, f64> = ji.iter().map(|s| (s.ngram.as_str(), s.z)).collect();
        for s in &ij {
            prop_assert_eq!(s.z, -ji[s.ngram.as_str()]);
            prop_assert!(s.variance > 0.0);
        }
        // brute force against the formulas, one group against the others
        let ovr = one_vs_rest(&table, 0, &cfg).unwrap();
        let b_total: f64 = table.background.values().sum::<u64>() as f64;
        let n_i: f64 = counts[0].iter().sum::<u64>() as f64;
        let n_j: f64 = counts[1..].iter().flatten().sum::<u64>() as f64;
        for s in &ovr {
            let w: usize = s.ngram[1..].parse().unwrap();
            let y_i = counts[0][w] as f64;
            let y_j: f64 = counts[1..].iter().map(|r| r[w] as f64).sum();
            let a = alpha0 * (y_i + y_j) / b_total;
            let delta = ((y_i + a) / (n_i + alpha0 - y_i - a)).ln() - ((y_j + a) / (n_j + alpha0 - y_j - a)).ln();
            let var = 1.0 / (y_i + a) + 1.0 / (y_j + a);
            prop_assert!((s.delta - delta).abs() < 1e-9);
            prop_assert!((s.z - delta / var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn log_odds_monotone_in_target_count(y_i in 0u32..50, extra in 1u32..50, y_j in 0u32..50, alpha_w in 0.01f64..5.0) {
        let (y_i, y_j) = (y_i as f64, y_j as f64);
        let n_i = y_i + extra as f64 + 1.0;
        let n_j = y_j + 10.0;
        let alpha0 = 10.0;
        let (d0, _, _) = log_odds_term(y_i, n_i, y_j, n_j, alpha_w, alpha0).unwrap();
        let (d1, _, _) = log_odds_term(y_i + 1.0, n_i, y_j, n_j, alpha_w, alpha0).unwrap();
        prop_assert!(d1 > d0);
    }

    #[test]
    fn pearson_affine_invariance(xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let Ok((r, p)) = pearson(&x, &y) else { return Ok(()) };
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!(p >= 0.0 && p <= 1.0);
        let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let (r2, _) = pearson(&moved, &y).unwrap();
        prop_assert!((r - r2).abs() < 1e-12);
        let (rxx, _) = pearson(&x, &x).unwrap();
        prop_assert!((rxx - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (rneg, _) = pearson(&x, &neg).unwrap();
        prop_assert!((rneg + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_p_decreases_with_r(n in 3usize..200) {
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        for w in grid.windows(2) {
            let (p0, p1) = (pearson_p_value(w[0], n), pearson_p_value(w[1], n));
            prop_assert!(p1 <= p0, "n={n} r={} p={p0} -> r={} p={p1}", w[0], w[1]);
            prop_assert!(p1 > 0.0 && p0 <= 1.0);
        }
    }

    #[test]
    fn profile_counts_sum_to_resistance(preds in prop::collection::vec(prop_oneof![
        prop::sample::select(Label::FINE.to_vec()).prop_map(PredictedLabel::Label),
        Just(PredictedLabel::Label(Label::Collaboration)),
        Just(PredictedLabel::Invalid),
    ], 1..80)) {
        let p = session_profile("s", &preds).unwrap();
        prop_assert_eq!(p.per_label_count.values().sum::<usize>(), p.resistant_count);
        let sum: f64 = p.per_label_proportion.values().sum();
        prop_assert!((sum - p.resistance_proportion).abs() < 1e-12);
        prop_assert!(p.distinct_types <= 13);
    }

    #[test]
    fn phase_score_ignores_order(mut ratings in prop::collection::vec(-1i8..=1, 1..40), seed: u64) {
        use rand::{seq::SliceRandom, SeedableRng};
        let before = phase_score(&ratings).unwrap();
        ratings.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(phase_score(&ratings).unwrap(), before);
    }

    #[test]
    fn anova_matches_definitions(
        control in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..12),
        experimental in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..12),
    ) {
        let mut participants = Vec::new();
        for (g, rows) in [(Group::Control, &control), (Group::Experimental, &experimental)] {
            for (i, &(pre, post)) in rows.iter().enumerate() {
                participants.push(ParticipantScores { participant_id: format!("{}{i}", g.as_str()), group: g, pre, post });
            }
        }
        let data = StudyDataset { participants };
        let r = mixed_anova_2x2(&data).unwrap();
        let o = oracle::Anova::of(&[&control, &experimental]);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        prop_assert!(close(r.ss_total, o.total));
        prop_assert!(close(r.ss_between_subjects, o.subjects));
        prop_assert!(close(r.group.ss, o.group));
        prop_assert!(close(r.error_between.ss, o.error_between));
        prop_assert!(close(r.phase.ss, o.phase));
        prop_assert!(close(r.interaction.ss, o.interaction));
        prop_assert!(close(r.error_within.ss, o.error_within));
        prop_assert!(close(r.ss_total, r.ss_between_subjects + r.ss_within_subjects));
        prop_assert!(close(r.ss_between_subjects, r.group.ss + r.error_between.ss));
        prop_assert!(close(r.ss_within_subjects, r.phase.ss + r.interaction.ss + r.error_within.ss));
        for e in [r.group, r.phase, r.interaction] {
            prop_assert!(e.f.map_or(true, |f| f >= 0.0));
            prop_assert!((0.0..=1.0).contains(&e.partial_eta_sq));
            prop_assert!((0.0..=1.0).contains(&e.p));
        }
    }
}

/// Sums of squares recomputed straight from the model residuals.
mod oracle {
    pub struct Anova {
        pub total: f64,
        pub subjects: f64,
        pub group: f64,
        pub error_between: f64,
        pub phase: f64,
        pub interaction: f64,
        pub error_within: f64,
    }

    fn avg(xs: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = xs.collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    impl Anova {
        pub fn of(groups: &[&Vec<(f64, f64)>]) -> Anova {
            let cell = |rows: &Vec<(f64, f64)>, j: usize| avg(rows.iter().map(|r| if j == 0 { r.0 } else { r.1 }));
            let everything: Vec<f64> = groups.iter().flat_map(|g| g.iter().flat_map(|r| [r.0, r.1])).collect();
            let gm = avg(everything.iter().copied());
            let phase_mean = |j: usize| avg(groups.iter().flat_map(|g| g.iter().map(move |r| if j == 0 { r.0 } else { r.1 })));
            let mut o = Anova { total: 0.0, subjects: 0.0, group: 0.0, error_between: 0.0, phase: 0.0, interaction: 0.0, error_within: 0.0 };
            for rows in groups {
                let cells = [cell(rows, 0), cell(rows, 1)];
                let gmean = (cells[0] + cells[1]) / 2.0;
                for &(pre, post) in rows.iter() {
                    let m = (pre + post) / 2.0;
                    for (j, x) in [pre, post].into_iter().enumerate() {
                        let pm = phase_mean(j);
                        o.total += (x - gm).powi(2);
                        o.subjects += (m - gm).powi(2);
                        o.group += (gmean - gm).powi(2);
                        o.error_between += (m - gmean).powi(2);
                        o.phase += (pm - gm).powi(2);
                        o.interaction += (cells[j] - gmean - pm + gm).powi(2);
                        o.error_within += (x - m - cells[j] + gmean).powi(2);
                    }
                }
            }
            o
        }
    }
}

#[test]
fn permitted_strings_cover_fine_labels_exactly() {
    let strings: BTreeSet<&str> = permitted_label_strings(Task::Fine).into_iter().collect();
    let expected: BTreeSet<&str> = Label::FINE.iter().map(|l| l.prompt_string()).collect();
    assert_eq!(strings, expected);
    let sample = Sample {
        sample_id: "s:1".into(),
        history: vec![Turn { speaker: Speaker::Counselor, text: "Hi.".into() }],
        response: "Hello.".into(),
        gold: None,
        rationale: None,
        extra: Default::default(),
    };
    let prompt = build_prompt(&PromptSpec { task: Task::Fine, shot_mode: ShotMode::Zero, exemplars: None, sample: &sample }).unwrap();
    let choice_line = prompt.user.lines().rev().find(|l| !l.trim().is_empty()).unwrap();
    let quoted: BTreeSet<String> = choice_line
        .split('"')
        .skip(1)
        .step_by(2)
        .map(str::to_string)
        .collect();
    let expected: BTreeSet<String> = expected.into_iter().map(str::to_string).collect();
    assert_eq!(quoted, expected);
}

#[test]
fn exemplar_draws_depend_on_seed() {
    let training = synthetic::samples_with_counts(&Label::ANNOTATION.map(|l| (l, 5)), 3);
    let draws: BTreeSet<Vec<String>> = (0..20)
        .map(|seed| {
            resistkit_core::prompting::sample_exemplars(&training, Task::Fine, seed)
                .unwrap()
                .exemplars
                .values()
                .map(|e| e.sample.sample_id.clone())
                .collect()
        })
        .collect();
    assert!(draws.len() > 1);
}
