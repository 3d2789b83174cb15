//! Canonical domain types and the immutable in-memory dataset store.
//!
//! A [`Dataset`] holds every student response sorted by `(timestamp,
//! answer_id)` plus per-entity indices. It is built once and never mutated;
//! all downstream modules read it concurrently.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One of the four options of a diagnostic multiple-choice question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum McqOption {
    A,
    B,
    C,
    D,
}

impl McqOption {
    pub fn from_index(i: usize) -> McqOption {
        match i % 4 {
            0 => McqOption::A,
            1 => McqOption::B,
            2 => McqOption::C,
            _ => McqOption::D,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            McqOption::A => "A",
            McqOption::B => "B",
            McqOption::C => "C",
            McqOption::D => "D",
        }
    }

    pub fn parse(s: &str) -> Option<McqOption> {
        match s.trim() {
            "A" | "a" | "1" => Some(McqOption::A),
            "B" | "b" | "2" => Some(McqOption::B),
            "C" | "c" | "3" => Some(McqOption::C),
            "D" | "d" | "4" => Some(McqOption::D),
            _ => None,
        }
    }
}

/// One student response event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: i64,
    pub question_id: i64,
    /// Unique per response across the whole dataset.
    pub answer_id: i64,
    /// 1 iff `chosen_option == correct_option`.
    pub is_correct: u8,
    pub correct_option: McqOption,
    pub chosen_option: McqOption,
    /// UTC epoch seconds, strictly positive.
    pub timestamp: i64,
    pub group_id: i64,
    pub quiz_id: i64,
    pub scheme_id: Option<i64>,
    /// Self-reported confidence in [0, 100]; nearly always absent.
    pub confidence: Option<f64>,
}

impl Interaction {
    /// True when the correctness flag agrees with the option columns.
    pub fn is_consistent(&self) -> bool {
        (self.chosen_option == self.correct_option) == (self.is_correct == 1)
    }
}

/// Question metadata: the skill-tree path the question assesses, root first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionMeta {
    pub question_id: i64,
    /// Root-to-leaf path of skill ids; non-empty.
    pub skill_path: Vec<i64>,
}

impl QuestionMeta {
    pub fn leaf_skill(&self) -> i64 {
        *self.skill_path.last().expect("skill_path is non-empty")
    }

    /// Skill node at tree level 1 (root).
    pub fn root_skill(&self) -> i64 {
        self.skill_path[0]
    }

    /// Skill node at tree level 2; duplicates the deepest available node
    /// for paths shorter than two.
    pub fn mid_skill(&self) -> i64 {
        self.skill_path[1.min(self.skill_path.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillNode {
    pub parent: Option<i64>,
    /// Roots have level 1; each child is one deeper.
    pub level: u32,
}

/// The skill hierarchy: a forest of rooted trees.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillTree {
    pub nodes: BTreeMap<i64, SkillNode>,
}

impl SkillTree {
    /// Builds the tree as the union of root-first paths. Rejects paths that
    /// assign two different parents to the same node.
    pub fn from_paths<'a>(paths: impl IntoIterator<Item = &'a [i64]>) -> Result<SkillTree> {
        let mut parents: BTreeMap<i64, Option<i64>> = BTreeMap::new();
        for path in paths {
            let mut prev: Option<i64> = None;
            for &node in path {
                match parents.get(&node) {
                    Some(&existing) if existing != prev => {
                        return Err(Error::SkillParentConflict {
                            skill: node,
                            first: existing,
                            second: prev,
                        });
                    }
                    Some(_) => {}
                    None => {
                        parents.insert(node, prev);
                    }
                }
                prev = Some(node);
            }
        }
        let mut tree = SkillTree::default();
        for (&node, &parent) in &parents {
            let level = Self::level_of(&parents, node)?;
            tree.nodes.insert(node, SkillNode { parent, level });
        }
        Ok(tree)
    }

    fn level_of(parents: &BTreeMap<i64, Option<i64>>, mut node: i64) -> Result<u32> {
        let mut level = 1u32;
        let mut seen = HashSet::new();
        seen.insert(node);
        while let Some(&Some(p)) = parents.get(&node) {
            if !seen.insert(p) {
                return Err(Error::CyclicSkillTree(p));
            }
            node = p;
            level += 1;
        }
        Ok(level)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, skill: i64) -> bool {
        self.nodes.contains_key(&skill)
    }

    /// Validates acyclicity and the level arithmetic over all nodes.
    pub fn validate(&self) -> Result<()> {
        for (&id, node) in &self.nodes {
            match node.parent {
                None => {
                    if node.level != 1 {
                        return Err(Error::CyclicSkillTree(id));
                    }
                }
                Some(p) => {
                    let parent = self.nodes.get(&p).ok_or(Error::CyclicSkillTree(p))?;
                    if parent.level + 1 != node.level {
                        return Err(Error::CyclicSkillTree(id));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Unspecified,
    Female,
    Male,
    Other,
}

/// Student metadata; every field besides the id may be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentMeta {
    pub user_id: i64,
    pub gender: Gender,
    pub dob: Option<NaiveDate>,
    /// Free/reduced-lunch indicator.
    pub premium_pupil: Option<bool>,
}

/// Split membership of one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim() {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Exhaustive, disjoint assignment of every interaction to a split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitLabel {
    pub by_answer: BTreeMap<i64, Split>,
}

impl SplitLabel {
    pub fn get(&self, answer_id: i64) -> Option<Split> {
        self.by_answer.get(&answer_id).copied()
    }

    /// Split of each dataset row, in dataset order.
    pub fn row_splits(&self, dataset: &Dataset) -> Vec<Split> {
        dataset
            .interactions
            .iter()
            .map(|x| self.get(x.answer_id).unwrap_or(Split::Train))
            .collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for s in self.by_answer.values() {
            match s {
                Split::Train => c.0 += 1,
                Split::Validation => c.1 += 1,
                Split::Test => c.2 += 1,
            }
        }
        c
    }
}

/// Dense remapping of raw external ids to contiguous array indices.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IdMap {
    to_dense: HashMap<i64, u32>,
    to_raw: Vec<i64>,
}

impl IdMap {
    fn intern(&mut self, raw: i64) -> u32 {
        if let Some(&d) = self.to_dense.get(&raw) {
            return d;
        }
        let d = self.to_raw.len() as u32;
        self.to_dense.insert(raw, d);
        self.to_raw.push(raw);
        d
    }

    pub fn dense(&self, raw: i64) -> Option<u32> {
        self.to_dense.get(&raw).copied()
    }

    pub fn raw(&self, dense: u32) -> i64 {
        self.to_raw[dense as usize]
    }

    pub fn len(&self) -> usize {
        self.to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_raw.is_empty()
    }
}

/// Soft anomalies found while building a dataset. Rows are kept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Anomaly {
    /// Interaction references a question with no metadata.
    OrphanQuestion { row: usize, question_id: i64 },
    /// Interaction references a student with no metadata.
    OrphanStudent { row: usize, user_id: i64 },
    /// dob not earlier than the user's first interaction; dob treated as missing.
    DobAfterActivity { user_id: i64 },
}

/// Immutable store of one dataset: sorted interactions, metadata maps,
/// the skill tree, and per-entity indices into the sorted order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Sorted by (timestamp, answer_id) ascending.
    pub interactions: Vec<Interaction>,
    pub questions: HashMap<i64, QuestionMeta>,
    pub students: HashMap<i64, StudentMeta>,
    pub skills: SkillTree,

    pub users: IdMap,
    pub question_ids: IdMap,
    pub groups: IdMap,
    pub quizzes: IdMap,

    /// Interaction row indices per dense user id, in global sorted order.
    pub by_user: Vec<Vec<u32>>,
    pub by_question: Vec<Vec<u32>>,
    pub by_group: Vec<Vec<u32>>,
    pub by_quiz: Vec<Vec<u32>>,

    pub anomalies: Vec<Anomaly>,
}

impl Dataset {
    pub fn n_interactions(&self) -> usize {
        self.interactions.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_questions(&self) -> usize {
        self.question_ids.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_quizzes(&self) -> usize {
        self.quizzes.len()
    }

    /// Fraction of correct responses; 0.5 for an empty dataset.
    pub fn base_rate(&self) -> f64 {
        if self.interactions.is_empty() {
            return 0.5;
        }
        let correct: u64 = self.interactions.iter().map(|x| x.is_correct as u64).sum();
        correct as f64 / self.interactions.len() as f64
    }

    /// Rows of one user in global sorted order.
    pub fn user_rows(&self, user_id: i64) -> &[u32] {
        self.users
            .dense(user_id)
            .map(|d| self.by_user[d as usize].as_slice())
            .unwrap_or(&[])
    }

    pub fn question_rows(&self, question_id: i64) -> &[u32] {
        self.question_ids
            .dense(question_id)
            .map(|d| self.by_question[d as usize].as_slice())
            .unwrap_or(&[])
    }

    /// Mean number of distinct questions per quiz; 1.0 when there are no quizzes.
    pub fn mean_quiz_size(&self) -> f64 {
        if self.quizzes.is_empty() {
            return 1.0;
        }
        let mut per_quiz: HashMap<i64, HashSet<i64>> = HashMap::new();
        for x in &self.interactions {
            per_quiz.entry(x.quiz_id).or_default().insert(x.question_id);
        }
        let total: usize = per_quiz.values().map(|s| s.len()).sum();
        total as f64 / per_quiz.len() as f64
    }
}

/// Assembles a [`Dataset`]: validates hard invariants, sorts interactions by
/// `(timestamp, answer_id)`, builds dense id maps and per-entity indices,
/// and collects soft anomalies (orphan rows are kept and flagged).
pub fn build_dataset(
    mut interactions: Vec<Interaction>,
    questions: HashMap<i64, QuestionMeta>,
    mut students: HashMap<i64, StudentMeta>,
    skills: SkillTree,
) -> Result<Dataset> {
    skills.validate()?;
    for meta in questions.values() {
        if meta.skill_path.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "question {} has an empty skill path",
                meta.question_id
            )));
        }
        for &s in &meta.skill_path {
            if !skills.contains(s) {
                return Err(Error::InvalidConfig(format!(
                    "question {} references unknown skill {}",
                    meta.question_id, s
                )));
            }
        }
    }

    let mut seen = HashSet::with_capacity(interactions.len());
    for x in &interactions {
        if !seen.insert(x.answer_id) {
            return Err(Error::DuplicateAnswerId(x.answer_id));
        }
        if !x.is_consistent() {
            return Err(Error::InconsistentCorrectness {
                answer_id: x.answer_id,
                is_correct: x.is_correct,
                chosen: x.chosen_option,
                correct: x.correct_option,
            });
        }
        if x.timestamp <= 0 {
            return Err(Error::InvalidConfig(format!(
                "interaction {} has non-positive timestamp {}",
                x.answer_id, x.timestamp
            )));
        }
    }

    interactions.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then(a.answer_id.cmp(&b.answer_id))
    });

    let mut anomalies = Vec::new();

    // A dob on or after the user's first response is metadata noise; drop it.
    let mut first_ts: HashMap<i64, i64> = HashMap::new();
    for x in &interactions {
        first_ts.entry(x.user_id).or_insert(x.timestamp);
    }
    for (uid, meta) in students.iter_mut() {
        if let (Some(dob), Some(&ts)) = (meta.dob, first_ts.get(uid)) {
            let dob_ts = dob
                .and_hms_opt(0, 0, 0)
                .expect("midnight exists")
                .and_utc()
                .timestamp();
            if dob_ts >= ts {
                meta.dob = None;
                anomalies.push(Anomaly::DobAfterActivity { user_id: *uid });
            }
        }
    }

    let mut users = IdMap::default();
    let mut question_ids = IdMap::default();
    let mut groups = IdMap::default();
    let mut quizzes = IdMap::default();
    let mut by_user: Vec<Vec<u32>> = Vec::new();
    let mut by_question: Vec<Vec<u32>> = Vec::new();
    let mut by_group: Vec<Vec<u32>> = Vec::new();
    let mut by_quiz: Vec<Vec<u32>> = Vec::new();

    for (row, x) in interactions.iter().enumerate() {
        let u = users.intern(x.user_id) as usize;
        let q = question_ids.intern(x.question_id) as usize;
        let g = groups.intern(x.group_id) as usize;
        let z = quizzes.intern(x.quiz_id) as usize;
        for (idx, store) in [
            (u, &mut by_user),
            (q, &mut by_question),
            (g, &mut by_group),
            (z, &mut by_quiz),
        ] {
            if store.len() <= idx {
                store.resize(idx + 1, Vec::new());
            }
            store[idx].push(row as u32);
        }
        if !questions.contains_key(&x.question_id) {
            anomalies.push(Anomaly::OrphanQuestion {
                row,
                question_id: x.question_id,
            });
        }
        if !students.contains_key(&x.user_id) {
            anomalies.push(Anomaly::OrphanStudent {
                row,
                user_id: x.user_id,
            });
        }
    }

    Ok(Dataset {
        interactions,
        questions,
        students,
        skills,
        users,
        question_ids,
        groups,
        quizzes,
        by_user,
        by_question,
        by_group,
        by_quiz,
        anomalies,
    })
}

/// Deterministic random split over answer_ids.
///
/// Answer ids are canonically sorted before shuffling, so the assignment is
/// invariant to the input order of the interactions. Class sizes are exact
/// counts derived from the fractions, not per-row coin flips.
pub fn split_random(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitLabel> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 || ft <= 0.0 {
        return Err(Error::BadSplitFractions(fractions));
    }
    let n = dataset.n_interactions();
    if n < 3 {
        return Err(Error::TooFewForSplit(n));
    }

    let mut ids: Vec<i64> = dataset.interactions.iter().map(|x| x.answer_id).collect();
    ids.sort_unstable();

    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n_val = (fv * n as f64).round() as usize;
    let n_test = (fe * n as f64).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);

    let mut by_answer = BTreeMap::new();
    for (i, id) in ids.into_iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
        by_answer.insert(id, split);
    }
    Ok(SplitLabel { by_answer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_interaction(answer_id: i64, user: i64, question: i64, ts: i64, correct: bool) -> Interaction {
        Interaction {
            user_id: user,
            question_id: question,
            answer_id,
            is_correct: correct as u8,
            correct_option: McqOption::A,
            chosen_option: if correct { McqOption::A } else { McqOption::B },
            timestamp: ts,
            group_id: user % 3,
            quiz_id: question % 5,
            scheme_id: None,
            confidence: None,
        }
    }

    #[test]
    fn empty_inputs_build_empty_dataset() {
        let ds = build_dataset(vec![], HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        assert_eq!(ds.n_interactions(), 0);
        assert_eq!(ds.n_users(), 0);
        assert_eq!(ds.n_questions(), 0);
        assert_eq!(ds.base_rate(), 0.5);
    }

    #[test]
    fn equal_timestamps_break_ties_by_answer_id() {
        let rows = vec![
            quick_interaction(9, 1, 1, 100, true),
            quick_interaction(7, 2, 2, 100, false),
            quick_interaction(8, 3, 3, 100, true),
        ];
        let ds = build_dataset(rows, HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        let order: Vec<i64> = ds.interactions.iter().map(|x| x.answer_id).collect();
        assert_eq!(order, vec![7, 8, 9]);
    }

    #[test]
    fn duplicate_answer_id_is_rejected_with_the_id() {
        let rows = vec![
            quick_interaction(5, 1, 1, 10, true),
            quick_interaction(5, 2, 2, 20, false),
        ];
        match build_dataset(rows, HashMap::new(), HashMap::new(), SkillTree::default()) {
            Err(Error::DuplicateAnswerId(5)) => {}
            other => panic!("expected DuplicateAnswerId(5), got {other:?}"),
        }
    }

    #[test]
    fn cyclic_skill_tree_is_rejected() {
        let mut tree = SkillTree::default();
        tree.nodes.insert(1, SkillNode { parent: Some(2), level: 2 });
        tree.nodes.insert(2, SkillNode { parent: Some(1), level: 2 });
        assert!(build_dataset(vec![], HashMap::new(), HashMap::new(), tree).is_err());
    }

    #[test]
    fn inconsistent_correctness_is_rejected() {
        let mut row = quick_interaction(1, 1, 1, 10, true);
        row.is_correct = 0; // contradicts chosen == correct
        let err = build_dataset(vec![row], HashMap::new(), HashMap::new(), SkillTree::default());
        assert!(matches!(err, Err(Error::InconsistentCorrectness { answer_id: 1, .. })));
    }

    #[test]
    fn index_lookups_agree_with_linear_scan() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let mut rows = Vec::new();
        for i in 0..4000i64 {
            let user = rng.random_range(0..100);
            let question = rng.random_range(0..40);
            rows.push(quick_interaction(i, user, question, rng.random_range(1..100_000), rng.random_bool(0.6)));
        }
        let ds = build_dataset(rows.clone(), HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        for _ in 0..20 {
            let user = rng.random_range(0..100);
            let question = rng.random_range(0..40);
            let from_index: Vec<i64> = ds
                .user_rows(user)
                .iter()
                .map(|&r| ds.interactions[r as usize].answer_id)
                .collect();
            let mut from_scan: Vec<i64> = ds
                .interactions
                .iter()
                .filter(|x| x.user_id == user)
                .map(|x| x.answer_id)
                .collect();
            assert_eq!(from_index, from_scan);
            from_scan = ds
                .interactions
                .iter()
                .filter(|x| x.question_id == question)
                .map(|x| x.answer_id)
                .collect();
            let q_index: Vec<i64> = ds
                .question_rows(question)
                .iter()
                .map(|&r| ds.interactions[r as usize].answer_id)
                .collect();
            assert_eq!(q_index, from_scan);
        }
    }

    #[test]
    fn resorting_a_built_dataset_is_a_noop() {
        let rows = vec![
            quick_interaction(3, 1, 1, 30, true),
            quick_interaction(1, 1, 2, 10, false),
            quick_interaction(2, 2, 1, 10, true),
        ];
        let ds = build_dataset(rows, HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        let mut again = ds.interactions.clone();
        again.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.answer_id.cmp(&b.answer_id)));
        assert_eq!(again, ds.interactions);
    }

    #[test]
    fn degenerate_split_puts_everything_in_train() {
        let rows: Vec<_> = (0..10).map(|i| quick_interaction(i, i, i, i + 1, true)).collect();
        let ds = build_dataset(rows, HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        let split = split_random(&ds, (1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(split.counts(), (10, 0, 0));
    }

    #[test]
    fn split_fractions_are_respected_within_two_percent() {
        let rows: Vec<_> = (0..10_000).map(|i| quick_interaction(i, i % 97, i % 37, i + 1, true)).collect();
        let ds = build_dataset(rows, HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        let split = split_random(&ds, (0.8, 0.1, 0.1), 1).unwrap();
        let (tr, va, te) = split.counts();
        assert!((tr as f64 / 10_000.0 - 0.8).abs() <= 0.02);
        assert!((va as f64 / 10_000.0 - 0.1).abs() <= 0.02);
        assert!((te as f64 / 10_000.0 - 0.1).abs() <= 0.02);
        assert_eq!(tr + va + te, 10_000);
    }

    #[test]
    fn split_is_deterministic_and_order_invariant() {
        let rows: Vec<_> = (0..500).map(|i| quick_interaction(i, i % 13, i % 7, i + 1, true)).collect();
        let ds = build_dataset(rows.clone(), HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        let a = split_random(&ds, (0.6, 0.2, 0.2), 42).unwrap();
        let b = split_random(&ds, (0.6, 0.2, 0.2), 42).unwrap();
        assert_eq!(a, b);

        let mut shuffled = rows;
        shuffled.reverse();
        let ds2 = build_dataset(shuffled, HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        let c = split_random(&ds2, (0.6, 0.2, 0.2), 42).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        let rows = vec![quick_interaction(1, 1, 1, 1, true)];
        let ds = build_dataset(rows, HashMap::new(), HashMap::new(), SkillTree::default()).unwrap();
        assert!(matches!(
            split_random(&ds, (0.8, 0.1, 0.1), 0),
            Err(Error::TooFewForSplit(1))
        ));
    }

    #[test]
    fn skill_tree_union_shares_prefixes() {
        let tree = SkillTree::from_paths([&[3, 57, 412][..], &[3, 57, 9][..]]).unwrap();
        assert_eq!(tree.len(), 4);
        assert_eq!(tree.nodes[&3].level, 1);
        assert_eq!(tree.nodes[&57].level, 2);
        assert_eq!(tree.nodes[&412].level, 3);
        assert_eq!(tree.nodes[&9].level, 3);
    }

    #[test]
    fn skill_tree_conflicting_parent_is_rejected() {
        let err = SkillTree::from_paths([&[1, 5][..], &[2, 5][..]]);
        assert!(matches!(err, Err(Error::SkillParentConflict { skill: 5, .. })));
    }
}
