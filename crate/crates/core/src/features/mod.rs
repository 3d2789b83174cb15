//! Leak-free feature engineering.
//!
//! Every interaction receives 14 predictors computed from strictly earlier
//! interactions only (earlier in the `(timestamp, answer_id)` order). The
//! computation is a single forward scan over the sorted dataset: a row's
//! features are read from running aggregates first, and the aggregates are
//! updated afterwards — and only for rows in the training split, so
//! validation/test labels can never influence any feature.

mod table;

pub use table::{read_ktft, write_ktft, FeatureTable, KTFT_MAGIC, KTFT_VERSION};

use std::collections::HashMap;

use crate::data::{Dataset, Split, SplitLabel};
use crate::{Error, Result};

/// Number of engineered features.
pub const NUM_FEATURES: usize = 14;

/// Column names, in fixed order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "user_prior",
    "user_volume",
    "skill_leaf_prior",
    "skill_mid_prior",
    "skill_root_prior",
    "question_difficulty",
    "question_volume",
    "quiz_difficulty",
    "group_level",
    "momentum",
    "dt_skill",
    "dt_any",
    "age_years",
    "premium",
];

/// Pseudo-observations pulled toward the running global prior.
pub const SMOOTHING_ALPHA: f64 = 5.0;

/// Decay constant of the momentum feature.
pub const MOMENTUM_DECAY: f64 = 0.9;

/// Prior used before any training data has been seen.
pub const DEFAULT_PRIOR: f64 = 0.5;

/// Time-delta features are capped at 30 days.
pub const DT_CAP_SECONDS: i64 = 2_592_000;

const YEAR_SECONDS: f64 = 31_557_600.0;

/// The 14 engineered predictors for one interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

/// Feature-subset views matching the four model granularities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Question,
    User,
    Group,
    Quiz,
    Full,
}

impl Granularity {
    /// Indices into the 14-column layout carried by this view.
    pub fn columns(self) -> &'static [usize] {
        match self {
            Granularity::Question => &[5, 6],
            Granularity::User => &[0, 1, 2, 3, 4, 9, 10, 11, 12, 13],
            Granularity::Group => &[8, 5],
            Granularity::Quiz => &[7, 5],
            Granularity::Full => &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Question => "question",
            Granularity::User => "user",
            Granularity::Group => "group",
            Granularity::Quiz => "quiz",
            Granularity::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Granularity> {
        match s {
            "question" => Ok(Granularity::Question),
            "user" => Ok(Granularity::User),
            "group" => Ok(Granularity::Group),
            "quiz" => Ok(Granularity::Quiz),
            "full" => Ok(Granularity::Full),
            other => Err(Error::UnknownGranularity(other.to_string())),
        }
    }
}

/// Smoothed success rate: `(success + alpha * prior) / (total + alpha)`.
pub fn smoothed_mean(success: u64, total: u64, global_prior: f64) -> f64 {
    debug_assert!(success <= total);
    debug_assert!(global_prior > 0.0 && global_prior < 1.0);
    (success as f64 + SMOOTHING_ALPHA * global_prior) / (total as f64 + SMOOTHING_ALPHA)
}

/// Exponentially decayed average of chronologically ordered binary outcomes.
/// Returns `None` for an empty history (callers substitute the global prior).
pub fn decayed_average(history: &[u8], gamma: f64) -> Result<Option<f64>> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::BadDecay(gamma));
    }
    if history.is_empty() {
        return Ok(None);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &y in history {
        num = gamma * num + y as f64;
        den = gamma * den + 1.0;
    }
    Ok(Some(num / den))
}

#[derive(Default, Clone, Copy)]
struct Counts {
    success: u64,
    total: u64,
}

impl Counts {
    fn push(&mut self, correct: bool) {
        self.success += correct as u64;
        self.total += 1;
    }
}

/// Exact running median over inserted values (sorted-vector insertion).
#[derive(Default)]
struct RunningMedian {
    sorted: Vec<f64>,
}

impl RunningMedian {
    fn insert(&mut self, x: f64) {
        let pos = self.sorted.partition_point(|&v| v < x);
        self.sorted.insert(pos, x);
    }

    fn median(&self) -> Option<f64> {
        let n = self.sorted.len();
        if n == 0 {
            return None;
        }
        Some(if n % 2 == 1 {
            self.sorted[n / 2]
        } else {
            (self.sorted[n / 2 - 1] + self.sorted[n / 2]) / 2.0
        })
    }
}

/// All state carried through the forward scan. Counts only ever grow, and
/// only training rows are folded in.
#[derive(Default)]
struct RunningAggregates {
    global: Counts,
    per_user: HashMap<i64, Counts>,
    per_question: HashMap<i64, Counts>,
    per_quiz: HashMap<i64, Counts>,
    per_group: HashMap<i64, Counts>,
    per_user_skill: HashMap<(i64, i64), Counts>,
    momentum_num: HashMap<i64, f64>,
    momentum_den: HashMap<i64, f64>,
    last_ts_user: HashMap<i64, i64>,
    last_ts_user_leaf: HashMap<(i64, i64), i64>,
    ages: RunningMedian,
}

impl RunningAggregates {
    /// Running global prior, smoothed toward the cold-start default so it
    /// stays strictly inside (0, 1).
    fn global_prior(&self) -> f64 {
        (self.global.success as f64 + SMOOTHING_ALPHA * DEFAULT_PRIOR)
            / (self.global.total as f64 + SMOOTHING_ALPHA)
    }
}

fn dt_feature(last: Option<i64>, now: i64) -> f64 {
    match last {
        None => -1.0,
        Some(t) => {
            let dt = (now - t).clamp(0, DT_CAP_SECONDS);
            (1.0 + dt as f64).ln()
        }
    }
}

fn dob_epoch_seconds(dob: chrono::NaiveDate) -> i64 {
    dob.and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp()
}

/// Computes the full 14-column [`FeatureTable`] for every interaction.
pub fn compute_features(dataset: &Dataset, split: &SplitLabel) -> FeatureTable {
    let splits = split.row_splits(dataset);
    let n = dataset.n_interactions();
    let mut agg = RunningAggregates::default();

    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    for (row, x) in dataset.interactions.iter().enumerate() {
        let prior = agg.global_prior();
        let meta = dataset.questions.get(&x.question_id);
        let (leaf, mid, root) = match meta {
            Some(m) => (Some(m.leaf_skill()), Some(m.mid_skill()), Some(m.root_skill())),
            None => (None, None, None),
        };

        let skill_prior = |node: Option<i64>| -> f64 {
            match node {
                None => smoothed_mean(0, 0, prior),
                Some(s) => {
                    let c = agg
                        .per_user_skill
                        .get(&(x.user_id, s))
                        .copied()
                        .unwrap_or_default();
                    smoothed_mean(c.success, c.total, prior)
                }
            }
        };

        let user = agg.per_user.get(&x.user_id).copied().unwrap_or_default();
        let question = agg.per_question.get(&x.question_id).copied().unwrap_or_default();
        let quiz = agg.per_quiz.get(&x.quiz_id).copied().unwrap_or_default();
        let group = agg.per_group.get(&x.group_id).copied().unwrap_or_default();

        let momentum = match agg.momentum_den.get(&x.user_id) {
            Some(&den) if den > 0.0 => agg.momentum_num[&x.user_id] / den,
            _ => prior,
        };

        let student = dataset.students.get(&x.user_id);
        let age = match student.and_then(|s| s.dob) {
            Some(dob) => (x.timestamp - dob_epoch_seconds(dob)) as f64 / YEAR_SECONDS,
            None => agg.ages.median().unwrap_or(0.0),
        };
        let premium = match student.and_then(|s| s.premium_pupil) {
            Some(p) => p as u8 as f64,
            None => 0.5,
        };

        features.push(FeatureVector([
            smoothed_mean(user.success, user.total, prior),
            (1.0 + user.total as f64).ln(),
            skill_prior(leaf),
            skill_prior(mid),
            skill_prior(root),
            smoothed_mean(question.success, question.total, prior),
            (1.0 + question.total as f64).ln(),
            smoothed_mean(quiz.success, quiz.total, prior),
            smoothed_mean(group.success, group.total, prior),
            momentum,
            dt_feature(agg.last_ts_user_leaf.get(&(x.user_id, leaf.unwrap_or(i64::MIN))).copied(), x.timestamp),
            dt_feature(agg.last_ts_user.get(&x.user_id).copied(), x.timestamp),
            age,
            premium,
        ]));
        labels.push(x.is_correct);

        // Emission done; fold this row into the aggregates only if it is
        // a training row.
        if splits[row] != Split::Train {
            continue;
        }
        let correct = x.is_correct == 1;
        agg.global.push(correct);
        agg.per_user.entry(x.user_id).or_default().push(correct);
        agg.per_question.entry(x.question_id).or_default().push(correct);
        agg.per_quiz.entry(x.quiz_id).or_default().push(correct);
        agg.per_group.entry(x.group_id).or_default().push(correct);
        if let Some(m) = meta {
            let mut prev = None;
            for &node in &m.skill_path {
                if prev != Some(node) {
                    agg.per_user_skill.entry((x.user_id, node)).or_default().push(correct);
                }
                prev = Some(node);
            }
            agg.last_ts_user_leaf.insert((x.user_id, m.leaf_skill()), x.timestamp);
        }
        let num = agg.momentum_num.entry(x.user_id).or_insert(0.0);
        *num = MOMENTUM_DECAY * *num + correct as u8 as f64;
        let den = agg.momentum_den.entry(x.user_id).or_insert(0.0);
        *den = MOMENTUM_DECAY * *den + 1.0;
        agg.last_ts_user.insert(x.user_id, x.timestamp);
        if let Some(dob) = student.and_then(|s| s.dob) {
            agg.ages.insert((x.timestamp - dob_epoch_seconds(dob)) as f64 / YEAR_SECONDS);
        }
    }

    FeatureTable::full(dataset, features, labels)
}

/// Restricts a full table to the column subset of one granularity.
pub fn feature_view(table: &FeatureTable, granularity: Granularity) -> FeatureTable {
    table.view(granularity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, Interaction, McqOption, QuestionMeta, SkillTree};
    use std::collections::HashMap as Map;

    fn row(answer_id: i64, user: i64, question: i64, ts: i64, correct: bool) -> Interaction {
        Interaction {
            user_id: user,
            question_id: question,
            answer_id,
            is_correct: correct as u8,
            correct_option: McqOption::A,
            chosen_option: if correct { McqOption::A } else { McqOption::C },
            timestamp: ts,
            group_id: 0,
            quiz_id: 0,
            scheme_id: None,
            confidence: None,
        }
    }

    fn all_train(dataset: &Dataset) -> SplitLabel {
        let by_answer = dataset
            .interactions
            .iter()
            .map(|x| (x.answer_id, Split::Train))
            .collect();
        SplitLabel { by_answer }
    }

    #[test]
    fn smoothed_mean_matches_the_formula() {
        assert_eq!(smoothed_mean(0, 0, 0.6), 0.6);
        assert!((smoothed_mean(10, 10, 0.5) - 12.5 / 15.0).abs() < 1e-15);
        // asymptotically consistent
        let big = 1_000_000u64;
        let p = 0.37;
        let s = (p * big as f64) as u64;
        assert!((smoothed_mean(s, big, 0.5) - p).abs() < 1e-5);
    }

    #[test]
    fn decayed_average_examples() {
        assert_eq!(decayed_average(&[1], 0.9).unwrap(), Some(1.0));
        let two = decayed_average(&[1, 0], 0.9).unwrap().unwrap();
        assert!((two - 0.9 / 1.9).abs() < 1e-15);
        // direct-sum oracle: weights gamma^(n-1-i)
        let history = [1u8, 0, 1, 1, 0, 1];
        let gamma: f64 = 0.9;
        let n = history.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &y) in history.iter().enumerate() {
            let w = gamma.powi((n - 1 - i) as i32);
            num += w * y as f64;
            den += w;
        }
        let got = decayed_average(&history, gamma).unwrap().unwrap();
        assert!((got - num / den).abs() < 1e-12);
        assert!(decayed_average(&[], 0.9).unwrap().is_none());
        assert!(decayed_average(&[1], 1.0).is_err());
        assert!(decayed_average(&[1], 0.0).is_err());
    }

    #[test]
    fn constant_history_is_a_fixed_point() {
        for &c in &[0u8, 1u8] {
            for &gamma in &[0.3, 0.9, 0.99] {
                let history = vec![c; 17];
                let got = decayed_average(&history, gamma).unwrap().unwrap();
                assert!((got - c as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn momentum_approaches_plain_mean_as_gamma_approaches_one() {
        let history = [1u8, 0, 1, 1, 0, 1, 0, 0, 1, 1];
        let mean = history.iter().map(|&y| y as f64).sum::<f64>() / history.len() as f64;
        let got = decayed_average(&history, 0.9999).unwrap().unwrap();
        assert!((got - mean).abs() < 1e-3);
    }

    #[test]
    fn first_interaction_gets_cold_start_fills() {
        let questions: Map<i64, QuestionMeta> =
            [(0, QuestionMeta { question_id: 0, skill_path: vec![1, 2, 3] })].into();
        let skills = SkillTree::from_paths([&[1i64, 2, 3][..]]).unwrap();
        let ds = build_dataset(vec![row(0, 0, 0, 100, true)], questions, Map::new(), skills).unwrap();
        let table = compute_features(&ds, &all_train(&ds));
        let f = table.feature_row(0);
        for &i in &[0usize, 2, 3, 4, 5, 7, 8] {
            assert_eq!(f[i], DEFAULT_PRIOR, "feature {} ({})", i, FEATURE_NAMES[i]);
        }
        assert_eq!(f[1], 0.0);
        assert_eq!(f[6], 0.0);
        assert_eq!(f[9], DEFAULT_PRIOR);
        assert_eq!(f[10], -1.0);
        assert_eq!(f[11], -1.0);
        assert_eq!(f[13], 0.5); // no student metadata
    }

    #[test]
    fn user_prior_follows_the_hand_oracle() {
        // One user answers [1, 1, 0]; the 4th row's user_prior must equal
        // (2 + 5 * running_prior) / (3 + 5) where the running prior is the
        // smoothed global rate after those three rows.
        let rows = vec![
            row(0, 7, 0, 10, true),
            row(1, 7, 1, 20, true),
            row(2, 7, 2, 30, false),
            row(3, 7, 3, 40, true),
        ];
        let ds = build_dataset(rows, Map::new(), Map::new(), SkillTree::default()).unwrap();
        let table = compute_features(&ds, &all_train(&ds));
        let prior = (2.0 + SMOOTHING_ALPHA * DEFAULT_PRIOR) / (3.0 + SMOOTHING_ALPHA);
        let expected = (2.0 + SMOOTHING_ALPHA * prior) / (3.0 + SMOOTHING_ALPHA);
        assert!((table.feature_row(3)[0] - expected).abs() < 1e-15);
        // user_volume is ln(1 + 3)
        assert!((table.feature_row(3)[1] - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn question_difficulty_approaches_the_smoothing_bound() {
        // Everyone answers question 0 correctly; f6 tends to its upper
        // smoothing bound (t + alpha*prior)/(t + alpha), not to 1.
        let mut rows = Vec::new();
        for i in 0..400i64 {
            rows.push(row(i, i, 0, 10 + i, true));
        }
        rows.push(row(400, 401, 0, 100_000, true));
        let ds = build_dataset(rows, Map::new(), Map::new(), SkillTree::default()).unwrap();
        let table = compute_features(&ds, &all_train(&ds));
        let last = table.len() - 1;
        let f6 = table.feature_row(last)[5];
        let prior = (400.0 + SMOOTHING_ALPHA * DEFAULT_PRIOR) / (400.0 + SMOOTHING_ALPHA);
        let bound = (400.0 + SMOOTHING_ALPHA * prior) / (400.0 + SMOOTHING_ALPHA);
        assert!((f6 - bound).abs() < 1e-12);
        assert!(f6 < 1.0 && f6 > 0.98);
    }

    #[test]
    fn views_have_the_decided_widths_and_cover_all_columns() {
        let ds = build_dataset(
            vec![row(0, 0, 0, 10, true), row(1, 1, 1, 20, false)],
            Map::new(),
            Map::new(),
            SkillTree::default(),
        )
        .unwrap();
        let table = compute_features(&ds, &all_train(&ds));
        assert_eq!(feature_view(&table, Granularity::Full).width(), 14);
        assert_eq!(feature_view(&table, Granularity::Question).width(), 2);
        assert_eq!(feature_view(&table, Granularity::User).width(), 10);
        assert_eq!(feature_view(&table, Granularity::Group).width(), 2);
        assert_eq!(feature_view(&table, Granularity::Quiz).width(), 2);
        let mut union: Vec<usize> = [
            Granularity::Question,
            Granularity::User,
            Granularity::Group,
            Granularity::Quiz,
        ]
        .iter()
        .flat_map(|g| g.columns().iter().copied())
        .collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(union, (0..14).collect::<Vec<_>>());
        assert!(Granularity::parse("nope").is_err());
    }

    #[test]
    fn dt_features_use_the_cap_and_sentinel() {
        let questions: Map<i64, QuestionMeta> = [
            (0, QuestionMeta { question_id: 0, skill_path: vec![1, 2, 3] }),
            (1, QuestionMeta { question_id: 1, skill_path: vec![1, 2, 4] }),
        ]
        .into();
        let skills = SkillTree::from_paths([&[1i64, 2, 3][..], &[1i64, 2, 4][..]]).unwrap();
        let rows = vec![
            row(0, 0, 0, 1000, true),
            row(1, 0, 1, 2000, true),           // different leaf: dt_skill = -1
            row(2, 0, 0, 90 * 86_400, false),   // same leaf, far beyond the cap
        ];
        let ds = build_dataset(rows, questions, Map::new(), skills).unwrap();
        let table = compute_features(&ds, &all_train(&ds));
        assert_eq!(table.feature_row(1)[10], -1.0);
        assert!((table.feature_row(1)[11] - (1.0f64 + 1000.0).ln()).abs() < 1e-12);
        let capped = (1.0 + DT_CAP_SECONDS as f64).ln();
        assert!((table.feature_row(2)[10] - capped).abs() < 1e-12);
    }

    #[test]
    fn validation_rows_never_update_aggregates() {
        let rows = vec![
            row(0, 7, 0, 10, true),
            row(1, 7, 1, 20, false), // held out
            row(2, 7, 2, 30, true),
        ];
        let ds = build_dataset(rows, Map::new(), Map::new(), SkillTree::default()).unwrap();
        let mut split = all_train(&ds);
        split.by_answer.insert(1, Split::Validation);
        let table = compute_features(&ds, &split);
        // Row 2 sees exactly one earlier training row (the first one).
        assert!((table.feature_row(2)[1] - 2.0f64.ln()).abs() < 1e-15);
        let prior = (1.0 + SMOOTHING_ALPHA * DEFAULT_PRIOR) / (1.0 + SMOOTHING_ALPHA);
        let expected = (1.0 + SMOOTHING_ALPHA * prior) / (1.0 + SMOOTHING_ALPHA);
        assert!((table.feature_row(2)[0] - expected).abs() < 1e-15);
    }
}
