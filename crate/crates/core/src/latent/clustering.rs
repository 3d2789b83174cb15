//! Hierarchical clustering of questions by co-attempt similarity.
//!
//! The similarity of two questions is the number of students who answered
//! both. Distances are `C_max - co(i, j)` with `C_max` the largest observed
//! co-attempt count (a monotone transform of the negated similarity that
//! keeps distances non-negative); pairs below the co-attempt floor are
//! treated as unconnected at distance `C_max`. Average-linkage merges, ties
//! broken by the smaller cluster-index pair.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, SplitLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Pairs with fewer shared students than this are unconnected.
    pub min_co_attempts: u64,
    /// Flat-cut target size; `None` uses the dataset's mean quiz size.
    pub target_cluster_size: Option<f64>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams { min_co_attempts: 5, target_cluster_size: None }
    }
}

/// One merge step: the two cluster indices joined and the linkage height.
/// Leaves are 0..n-1; merge t creates cluster n+t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionClustering {
    /// Sorted question ids; leaf i of the dendrogram is `question_ids[i]`.
    pub question_ids: Vec<i64>,
    pub merges: Vec<Merge>,
    /// Flat assignment at the default cut.
    pub assignment: BTreeMap<i64, i64>,
    pub n_clusters: usize,
}

impl QuestionClustering {
    /// Re-cuts the dendrogram to `k` clusters. Cluster ids are assigned by
    /// the smallest member question id, so the labelling is deterministic.
    pub fn cut(&self, k: usize) -> BTreeMap<i64, i64> {
        let n = self.question_ids.len();
        let k = k.clamp(1, n.max(1));
        let mut members: HashMap<usize, Vec<usize>> = (0..n).map(|i| (i, vec![i])).collect();
        let mut active = n;
        for (t, merge) in self.merges.iter().enumerate() {
            if active <= k {
                break;
            }
            let left = members.remove(&merge.left).unwrap_or_default();
            let mut right = members.remove(&merge.right).unwrap_or_default();
            right.extend(left);
            members.insert(n + t, right);
            active -= 1;
        }
        let mut groups: Vec<Vec<usize>> = members.into_values().collect();
        groups.sort_by_key(|g| g.iter().min().copied().unwrap_or(usize::MAX));
        let mut assignment = BTreeMap::new();
        for (cluster, group) in groups.iter().enumerate() {
            for &leaf in group {
                assignment.insert(self.question_ids[leaf], cluster as i64);
            }
        }
        assignment
    }
}

/// Builds the co-attempt dendrogram over every question in the dataset,
/// counting co-attempts over training rows only.
pub fn cluster_questions(dataset: &Dataset, split: &SplitLabel, params: &ClusterParams) -> QuestionClustering {
    let splits = split.row_splits(dataset);
    let mut question_ids: Vec<i64> = (0..dataset.n_questions())
        .map(|d| dataset.question_ids.raw(d as u32))
        .collect();
    question_ids.sort_unstable();
    let index: HashMap<i64, usize> = question_ids.iter().enumerate().map(|(i, &q)| (q, i)).collect();
    let n = question_ids.len();

    // distinct attempted questions per user
    let mut per_user: HashMap<i64, HashSet<usize>> = HashMap::new();
    for (row, x) in dataset.interactions.iter().enumerate() {
        if splits[row] == Split::Train {
            per_user.entry(x.user_id).or_default().insert(index[&x.question_id]);
        }
    }

    let mut co: HashMap<(usize, usize), u64> = HashMap::new();
    for set in per_user.values() {
        let mut qs: Vec<usize> = set.iter().copied().collect();
        qs.sort_unstable();
        for i in 0..qs.len() {
            for j in i + 1..qs.len() {
                *co.entry((qs[i], qs[j])).or_insert(0) += 1;
            }
        }
    }
    let c_max = co.values().copied().max().unwrap_or(0) as f64;

    // dense distance matrix
    let mut dist = vec![c_max; n * n];
    for (&(i, j), &count) in &co {
        if count >= params.min_co_attempts {
            let d = c_max - count as f64;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    // average-linkage agglomeration (Lance-Williams update)
    let mut sizes = vec![1usize; n];
    let mut alias: Vec<usize> = (0..n).collect(); // position -> current cluster index
    let mut active: Vec<bool> = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for t in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let d = dist[i * n + j];
                if best.map(|(_, _, bd)| d < bd).unwrap_or(true) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, height)) = best else { break };
        merges.push(Merge { left: alias[i], right: alias[j], height });
        // fold j into i; the merged cluster keeps position i
        let (si, sj) = (sizes[i] as f64, sizes[j] as f64);
        for m in 0..n {
            if !active[m] || m == i || m == j {
                continue;
            }
            let d = (si * dist[i * n + m] + sj * dist[j * n + m]) / (si + sj);
            dist[i * n + m] = d;
            dist[m * n + i] = d;
        }
        sizes[i] += sizes[j];
        active[j] = false;
        alias[i] = n + t;
    }

    let target = params
        .target_cluster_size
        .unwrap_or_else(|| dataset.mean_quiz_size())
        .max(1.0);
    let k = ((n as f64) / target).ceil() as usize;
    let clustering = QuestionClustering {
        question_ids,
        merges,
        assignment: BTreeMap::new(),
        n_clusters: k.max(1),
    };
    let assignment = clustering.cut(k.max(1));
    QuestionClustering { assignment, ..clustering }
}

/// Adjusted Rand index between two labelings of the same elements.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table: HashMap<(i64, i64), u64> = HashMap::new();
    let mut rows: HashMap<i64, u64> = HashMap::new();
    let mut cols: HashMap<i64, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_table: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_table - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, Interaction, McqOption, SkillTree};
    use std::collections::HashMap as Map;

    fn all_train(dataset: &Dataset) -> SplitLabel {
        SplitLabel {
            by_answer: dataset.interactions.iter().map(|x| (x.answer_id, Split::Train)).collect(),
        }
    }

    /// Block-structured dataset: `blocks` disjoint user pools, each pool
    /// answering only its own block of questions.
    fn planted_blocks(blocks: usize, users_per_block: usize, questions_per_block: usize) -> Dataset {
        let mut rows = Vec::new();
        let mut answer_id = 0i64;
        for blk in 0..blocks {
            for u in 0..users_per_block {
                let user_id = (blk * users_per_block + u) as i64;
                for q in 0..questions_per_block {
                    let question_id = (blk * questions_per_block + q) as i64;
                    rows.push(Interaction {
                        user_id,
                        question_id,
                        answer_id,
                        is_correct: ((u + q) % 2) as u8,
                        correct_option: McqOption::A,
                        chosen_option: if (u + q) % 2 == 1 { McqOption::A } else { McqOption::B },
                        timestamp: 1 + answer_id,
                        group_id: blk as i64,
                        // quiz ids deliberately cut across blocks
                        quiz_id: (q % 2) as i64,
                        scheme_id: None,
                        confidence: None,
                    });
                    answer_id += 1;
                }
            }
        }
        build_dataset(rows, Map::new(), Map::new(), SkillTree::default()).unwrap()
    }

    #[test]
    fn identical_attempt_sets_merge_first_at_distance_zero() {
        // questions 0 and 1 answered by everyone; question 2 by nobody shared
        let mut rows = Vec::new();
        let mut answer_id = 0;
        for u in 0..10i64 {
            for q in [0i64, 1] {
                rows.push(Interaction {
                    user_id: u,
                    question_id: q,
                    answer_id,
                    is_correct: 1,
                    correct_option: McqOption::A,
                    chosen_option: McqOption::A,
                    timestamp: 1 + answer_id,
                    group_id: 0,
                    quiz_id: 0,
                    scheme_id: None,
                    confidence: None,
                });
                answer_id += 1;
            }
        }
        rows.push(Interaction {
            user_id: 99,
            question_id: 2,
            answer_id,
            is_correct: 1,
            correct_option: McqOption::A,
            chosen_option: McqOption::A,
            timestamp: 1 + answer_id,
            group_id: 0,
            quiz_id: 0,
            scheme_id: None,
            confidence: None,
        });
        let dataset = build_dataset(rows, Map::new(), Map::new(), SkillTree::default()).unwrap();
        let clustering = cluster_questions(&dataset, &all_train(&dataset), &ClusterParams::default());
        assert_eq!(clustering.merges[0].height, 0.0);
        assert_eq!(clustering.merges[0].left, 0);
        assert_eq!(clustering.merges[0].right, 1);
        // the isolated question only joins at the maximal height
        let last = clustering.merges.last().unwrap();
        assert_eq!(last.height, 10.0); // C_max
    }

    #[test]
    fn merge_heights_never_decrease() {
        let dataset = planted_blocks(4, 8, 6);
        let clustering = cluster_questions(
            &dataset,
            &all_train(&dataset),
            &ClusterParams { min_co_attempts: 1, target_cluster_size: Some(6.0) },
        );
        for pair in clustering.merges.windows(2) {
            assert!(pair[1].height >= pair[0].height - 1e-9);
        }
    }

    #[test]
    fn planted_partition_is_recovered_exactly() {
        let blocks = 10;
        let dataset = planted_blocks(blocks, 10, 8);
        let clustering = cluster_questions(
            &dataset,
            &all_train(&dataset),
            &ClusterParams { min_co_attempts: 5, target_cluster_size: Some(8.0) },
        );
        let cut = clustering.cut(blocks);
        let mut found = Vec::new();
        let mut truth = Vec::new();
        for (&q, &c) in &cut {
            found.push(c);
            truth.push(q / 8); // questions_per_block = 8
        }
        let ari = adjusted_rand_index(&found, &truth);
        assert_eq!(ari, 1.0);
    }

    #[test]
    fn clustering_is_invariant_to_user_relabeling() {
        let dataset = planted_blocks(3, 7, 5);
        let params = ClusterParams { min_co_attempts: 2, target_cluster_size: Some(5.0) };
        let a = cluster_questions(&dataset, &all_train(&dataset), &params);

        // relabel users by an affine map; structure is unchanged
        let relabeled: Vec<Interaction> = dataset
            .interactions
            .iter()
            .map(|x| Interaction { user_id: 10_000 - x.user_id * 3, ..x.clone() })
            .collect();
        let dataset2 = build_dataset(relabeled, Map::new(), Map::new(), SkillTree::default()).unwrap();
        let b = cluster_questions(&dataset2, &all_train(&dataset2), &params);
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn ari_extremes_behave() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 9, 9]), 1.0);
        let random = adjusted_rand_index(&[0, 1, 0, 1], &[0, 0, 1, 1]);
        assert!(random < 0.5);
    }
}
