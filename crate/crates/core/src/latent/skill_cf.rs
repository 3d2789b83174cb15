//! Skill-profile model: a user x leaf-skill matrix of average scores,
//! completed by weighted regularized matrix factorization with biases
//! (alternating least squares, confidence weight = observation count).

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, SplitLabel};
use crate::features::SMOOTHING_ALPHA;
use crate::{Error, Result};

/// Observed (success, total) per user x leaf skill, training rows only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillMatrix {
    /// Raw user id -> dense row.
    pub user_index: BTreeMap<i64, u32>,
    /// Raw leaf-skill id -> dense column.
    pub skill_index: BTreeMap<i64, u32>,
    #[serde(with = "cells_as_sorted_list")]
    pub cells: HashMap<(u32, u32), (u64, u64)>,
}

/// Tuple-keyed maps do not serialize to JSON; persist the cells as a sorted
/// list so artifacts are also byte-stable.
mod cells_as_sorted_list {
    use std::collections::HashMap;

    pub fn serialize<S: serde::Serializer>(
        cells: &HashMap<(u32, u32), (u64, u64)>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let mut flat: Vec<(u32, u32, u64, u64)> = cells
            .iter()
            .map(|(&(r, c), &(succ, tot))| (r, c, succ, tot))
            .collect();
        flat.sort_unstable();
        serde::Serialize::serialize(&flat, s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        d: D,
    ) -> Result<HashMap<(u32, u32), (u64, u64)>, D::Error> {
        let flat: Vec<(u32, u32, u64, u64)> = serde::Deserialize::deserialize(d)?;
        Ok(flat.into_iter().map(|(r, c, s, t)| ((r, c), (s, t))).collect())
    }
}

impl SkillMatrix {
    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn n_skills(&self) -> usize {
        self.skill_index.len()
    }

    pub fn observed(&self, user: i64, skill: i64) -> Option<(u64, u64)> {
        let r = self.user_index.get(&user)?;
        let c = self.skill_index.get(&skill)?;
        self.cells.get(&(*r, *c)).copied()
    }

    pub fn mean(&self, row: u32, col: u32) -> Option<f64> {
        self.cells.get(&(row, col)).map(|&(s, t)| s as f64 / t as f64)
    }
}

/// Aggregates training interactions into the user x skill matrix.
pub fn build_skill_matrix(dataset: &Dataset, split: &SplitLabel) -> SkillMatrix {
    let splits = split.row_splits(dataset);
    let mut matrix = SkillMatrix::default();
    let mut users: Vec<i64> = dataset.students.keys().copied().collect();
    users.extend(dataset.interactions.iter().map(|x| x.user_id));
    users.sort_unstable();
    users.dedup();
    for (i, u) in users.into_iter().enumerate() {
        matrix.user_index.insert(u, i as u32);
    }
    let mut skills: Vec<i64> = dataset.questions.values().map(|m| m.leaf_skill()).collect();
    skills.sort_unstable();
    skills.dedup();
    for (i, s) in skills.into_iter().enumerate() {
        matrix.skill_index.insert(s, i as u32);
    }
    for (row, x) in dataset.interactions.iter().enumerate() {
        if splits[row] != Split::Train {
            continue;
        }
        let Some(meta) = dataset.questions.get(&x.question_id) else { continue };
        let r = matrix.user_index[&x.user_id];
        let c = matrix.skill_index[&meta.leaf_skill()];
        let cell = matrix.cells.entry((r, c)).or_insert((0, 0));
        cell.0 += x.is_correct as u64;
        cell.1 += 1;
    }
    matrix
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub k: usize,
    pub l2: f64,
    pub iterations: usize,
    /// Observed cells with at least this many responses bypass the
    /// factorization and return their smoothed mean directly.
    pub observed_bypass_total: u64,
    pub seed: u64,
}

impl Default for FactorParams {
    fn default() -> Self {
        FactorParams { k: 16, l2: 0.1, iterations: 50, observed_bypass_total: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub k: usize,
    pub l2: f64,
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub skill_bias: Vec<f64>,
    /// Row-major (n_users x k).
    pub user_factors: Vec<f64>,
    pub skill_factors: Vec<f64>,
    /// Weighted squared-error objective after every full sweep.
    pub objective_trace: Vec<f64>,
    pub observed_bypass_total: u64,
}

struct Adjacency {
    /// (other index, mean, weight) per row / per column, sorted.
    by_user: Vec<Vec<(u32, f64, f64)>>,
    by_skill: Vec<Vec<(u32, f64, f64)>>,
}

fn adjacency(matrix: &SkillMatrix) -> Adjacency {
    let mut by_user = vec![Vec::new(); matrix.n_users()];
    let mut by_skill = vec![Vec::new(); matrix.n_skills()];
    let mut keys: Vec<(u32, u32)> = matrix.cells.keys().copied().collect();
    keys.sort_unstable();
    for (r, c) in keys {
        let (s, t) = matrix.cells[&(r, c)];
        let mean = s as f64 / t as f64;
        let weight = t as f64;
        by_user[r as usize].push((c, mean, weight));
        by_skill[c as usize].push((r, mean, weight));
    }
    Adjacency { by_user, by_skill }
}

fn objective(model: &FactorModel, adj: &Adjacency) -> f64 {
    let k = model.k;
    let mut total = 0.0;
    for (r, cells) in adj.by_user.iter().enumerate() {
        for &(c, mean, weight) in cells {
            let mut pred = model.global_mean + model.user_bias[r] + model.skill_bias[c as usize];
            for f in 0..k {
                pred += model.user_factors[r * k + f] * model.skill_factors[c as usize * k + f];
            }
            total += weight * (mean - pred) * (mean - pred);
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    total
        + model.l2
            * (norm(&model.user_factors)
                + norm(&model.skill_factors)
                + norm(&model.user_bias)
                + norm(&model.skill_bias))
}

/// Weighted regularized ALS. Every block update is an exact minimizer given
/// the other blocks, so the objective never increases between sweeps.
pub fn factorize(matrix: &SkillMatrix, params: &FactorParams) -> Result<FactorModel> {
    if matrix.cells.is_empty() {
        return Err(Error::EmptyTraining("skill matrix"));
    }
    let (n_users, n_skills, k) = (matrix.n_users(), matrix.n_skills(), params.k);
    let adj = adjacency(matrix);

    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let mut model = FactorModel {
        k,
        l2: params.l2,
        global_mean: 0.0,
        user_bias: vec![0.0; n_users],
        skill_bias: vec![0.0; n_skills],
        user_factors: (0..n_users * k).map(|_| rng.random::<f64>() * 0.2 - 0.1).collect(),
        skill_factors: (0..n_skills * k).map(|_| rng.random::<f64>() * 0.2 - 0.1).collect(),
        objective_trace: Vec::with_capacity(params.iterations),
        observed_bypass_total: params.observed_bypass_total,
    };

    // weighted mean as the starting global offset
    let mut wsum = 0.0;
    let mut msum = 0.0;
    for cells in &adj.by_user {
        for &(_, mean, weight) in cells {
            wsum += weight;
            msum += weight * mean;
        }
    }
    model.global_mean = msum / wsum;

    let dot = |uf: &[f64], sf: &[f64], r: usize, c: usize| -> f64 {
        (0..k).map(|f| uf[r * k + f] * sf[c * k + f]).sum()
    };

    for _ in 0..params.iterations {
        // global offset
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, cells) in adj.by_user.iter().enumerate() {
            for &(c, mean, weight) in cells {
                let rest = model.user_bias[r]
                    + model.skill_bias[c as usize]
                    + dot(&model.user_factors, &model.skill_factors, r, c as usize);
                num += weight * (mean - rest);
                den += weight;
            }
        }
        model.global_mean = num / den;

        // user biases
        for (r, cells) in adj.by_user.iter().enumerate() {
            let mut num = 0.0;
            let mut den = params.l2;
            for &(c, mean, weight) in cells {
                let rest = model.global_mean
                    + model.skill_bias[c as usize]
                    + dot(&model.user_factors, &model.skill_factors, r, c as usize);
                num += weight * (mean - rest);
                den += weight;
            }
            model.user_bias[r] = num / den;
        }

        // user factors: closed-form ridge solve per row
        if k > 0 {
            for (r, cells) in adj.by_user.iter().enumerate() {
                if cells.is_empty() {
                    continue;
                }
                let mut a = DMatrix::<f64>::zeros(k, k);
                let mut rhs = DVector::<f64>::zeros(k);
                for &(c, mean, weight) in cells {
                    let target = mean
                        - model.global_mean
                        - model.user_bias[r]
                        - model.skill_bias[c as usize];
                    for f in 0..k {
                        let vf = model.skill_factors[c as usize * k + f];
                        rhs[f] += weight * target * vf;
                        for g in f..k {
                            a[(f, g)] += weight * vf * model.skill_factors[c as usize * k + g];
                        }
                    }
                }
                for f in 0..k {
                    a[(f, f)] += params.l2 + 1e-12;
                    for g in 0..f {
                        a[(f, g)] = a[(g, f)];
                    }
                }
                if let Some(sol) = a.cholesky().map(|ch| ch.solve(&rhs)) {
                    for f in 0..k {
                        model.user_factors[r * k + f] = sol[f];
                    }
                }
            }
        }

        // skill biases
        for (c, cells) in adj.by_skill.iter().enumerate() {
            let mut num = 0.0;
            let mut den = params.l2;
            for &(r, mean, weight) in cells {
                let rest = model.global_mean
                    + model.user_bias[r as usize]
                    + dot(&model.user_factors, &model.skill_factors, r as usize, c);
                num += weight * (mean - rest);
                den += weight;
            }
            model.skill_bias[c] = num / den;
        }

        // skill factors
        if k > 0 {
            for (c, cells) in adj.by_skill.iter().enumerate() {
                if cells.is_empty() {
                    continue;
                }
                let mut a = DMatrix::<f64>::zeros(k, k);
                let mut rhs = DVector::<f64>::zeros(k);
                for &(r, mean, weight) in cells {
                    let target = mean
                        - model.global_mean
                        - model.user_bias[r as usize]
                        - model.skill_bias[c];
                    for f in 0..k {
                        let uf = model.user_factors[r as usize * k + f];
                        rhs[f] += weight * target * uf;
                        for g in f..k {
                            a[(f, g)] += weight * uf * model.user_factors[r as usize * k + g];
                        }
                    }
                }
                for f in 0..k {
                    a[(f, f)] += params.l2 + 1e-12;
                    for g in 0..f {
                        a[(f, g)] = a[(g, f)];
                    }
                }
                if let Some(sol) = a.cholesky().map(|ch| ch.solve(&rhs)) {
                    for f in 0..k {
                        model.skill_factors[c * k + f] = sol[f];
                    }
                }
            }
        }

        model.objective_trace.push(objective(&model, &adj));
    }
    Ok(model)
}

/// Probability that `user` answers `question` correctly, from the completed
/// skill profile. Heavily observed cells trust the data over the imputation.
pub fn predict_skill_cf(
    model: &FactorModel,
    matrix: &SkillMatrix,
    dataset: &Dataset,
    user: i64,
    question: i64,
) -> f64 {
    let clip = |p: f64| p.clamp(1e-4, 1.0 - 1e-4);
    let Some(leaf) = dataset.questions.get(&question).map(|m| m.leaf_skill()) else {
        return clip(model.global_mean);
    };
    let Some(&col) = matrix.skill_index.get(&leaf) else {
        return clip(model.global_mean);
    };
    let Some(&row) = matrix.user_index.get(&user) else {
        return clip(model.global_mean + model.skill_bias[col as usize]);
    };
    if let Some((success, total)) = matrix.cells.get(&(row, col)) {
        if *total >= model.observed_bypass_total {
            let prior = model.global_mean.clamp(1e-4, 1.0 - 1e-4);
            return clip((*success as f64 + SMOOTHING_ALPHA * prior) / (*total as f64 + SMOOTHING_ALPHA));
        }
    }
    let k = model.k;
    let mut pred = model.global_mean + model.user_bias[row as usize] + model.skill_bias[col as usize];
    for f in 0..k {
        pred += model.user_factors[row as usize * k + f] * model.skill_factors[col as usize * k + f];
    }
    clip(pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, Interaction, McqOption, QuestionMeta, SkillTree};
    use crate::ingest::{generate_synthetic, SynthConfig};
    use crate::math::{pearson, two_pl_probability};

    fn all_train(dataset: &Dataset) -> SplitLabel {
        SplitLabel {
            by_answer: dataset.interactions.iter().map(|x| (x.answer_id, Split::Train)).collect(),
        }
    }

    fn tiny_dataset() -> Dataset {
        let questions: std::collections::HashMap<i64, QuestionMeta> = [
            (0, QuestionMeta { question_id: 0, skill_path: vec![1, 2, 10] }),
            (1, QuestionMeta { question_id: 1, skill_path: vec![1, 2, 11] }),
        ]
        .into();
        let skills = SkillTree::from_paths([&[1i64, 2, 10][..], &[1i64, 2, 11][..]]).unwrap();
        let mut rows = Vec::new();
        // user 5 answers skill-10 questions [1, 1, 0]
        for (i, correct) in [(0i64, true), (1, true), (2, false)] {
            rows.push(Interaction {
                user_id: 5,
                question_id: 0,
                answer_id: i,
                is_correct: correct as u8,
                correct_option: McqOption::A,
                chosen_option: if correct { McqOption::A } else { McqOption::B },
                timestamp: 100 + i,
                group_id: 0,
                quiz_id: 0,
                scheme_id: None,
                confidence: None,
            });
        }
        build_dataset(rows, questions, std::collections::HashMap::new(), skills).unwrap()
    }

    #[test]
    fn unobserved_cells_are_unmasked_and_averages_are_exact() {
        let dataset = tiny_dataset();
        let matrix = build_skill_matrix(&dataset, &all_train(&dataset));
        assert_eq!(matrix.observed(5, 10), Some((2, 3)));
        let (s, t) = matrix.observed(5, 10).unwrap();
        assert!((s as f64 / t as f64 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(matrix.observed(5, 11), None);
        assert_eq!(matrix.observed(99, 10), None);
    }

    #[test]
    fn cell_totals_conserve_the_training_count() {
        let (dataset, _) = generate_synthetic(&SynthConfig {
            n_users: 50,
            responses_per_user: 30,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let split = crate::data::split_random(&dataset, (0.7, 0.15, 0.15), 3).unwrap();
        let matrix = build_skill_matrix(&dataset, &split);
        let total: u64 = matrix.cells.values().map(|&(_, t)| t).sum();
        let (train, _, _) = split.counts();
        assert_eq!(total as usize, train);
    }

    #[test]
    fn planted_rank_one_matrix_is_recovered() {
        // fully observed rank-1-plus-offset structure, lambda = 0; cell
        // values are exact multiples of 1/total so the success counts
        // represent the planted matrix without rounding noise
        let mut matrix = SkillMatrix::default();
        let (nu, ns) = (10u32, 8u32);
        let total = 16_000u64;
        for u in 0..nu {
            matrix.user_index.insert(u as i64, u);
        }
        for s in 0..ns {
            matrix.skill_index.insert(100 + s as i64, s);
        }
        for u in 0..nu {
            for s in 0..ns {
                // value = 0.2 + 0.5 * (u+1)/10 * (s+1)/8, so value * 16000
                // = 3200 + 100 (u+1)(s+1) exactly
                let success = 3200 + 100 * (u as u64 + 1) * (s as u64 + 1);
                matrix.cells.insert((u, s), (success, total));
            }
        }
        let model = factorize(
            &matrix,
            &FactorParams { k: 1, l2: 0.0, iterations: 200, seed: 2, ..FactorParams::default() },
        )
        .unwrap();
        let mut sq = 0.0;
        let mut n = 0.0;
        for ((r, c), &(s, t)) in &matrix.cells {
            let truth = s as f64 / t as f64;
            let mut pred = model.global_mean + model.user_bias[*r as usize] + model.skill_bias[*c as usize];
            pred += model.user_factors[*r as usize] * model.skill_factors[*c as usize];
            sq += (truth - pred) * (truth - pred);
            n += 1.0;
        }
        let rmse = (sq / n).sqrt();
        assert!(rmse <= 1e-6, "rmse {rmse}");
    }

    #[test]
    fn rank_zero_reduces_to_the_additive_model() {
        let dataset = tiny_dataset();
        let matrix = build_skill_matrix(&dataset, &all_train(&dataset));
        let model = factorize(&matrix, &FactorParams { k: 0, iterations: 30, ..FactorParams::default() }).unwrap();
        let row = matrix.user_index[&5] as usize;
        let col = matrix.skill_index[&10] as usize;
        let pred = predict_skill_cf(&model, &matrix, &dataset, 5, 0);
        let additive = (model.global_mean + model.user_bias[row] + model.skill_bias[col]).clamp(1e-4, 1.0 - 1e-4);
        assert!((pred - additive).abs() < 1e-12);
        assert!(model.user_factors.is_empty());
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let (dataset, _) = generate_synthetic(&SynthConfig {
            n_users: 80,
            responses_per_user: 40,
            seed: 9,
            ..SynthConfig::default()
        })
        .unwrap();
        let matrix = build_skill_matrix(&dataset, &all_train(&dataset));
        let model = factorize(&matrix, &FactorParams { k: 8, iterations: 50, seed: 4, ..FactorParams::default() }).unwrap();
        assert_eq!(model.objective_trace.len(), 50);
        for pair in model.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "objective rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn heavily_observed_cells_bypass_the_factorization() {
        let mut matrix = SkillMatrix::default();
        matrix.user_index.insert(1, 0);
        matrix.skill_index.insert(10, 0);
        matrix.skill_index.insert(11, 1);
        matrix.cells.insert((0, 0), (45, 50)); // far beyond the bypass threshold
        matrix.cells.insert((0, 1), (1, 2));
        let model = factorize(&matrix, &FactorParams { k: 2, iterations: 20, ..FactorParams::default() }).unwrap();

        let questions: std::collections::HashMap<i64, QuestionMeta> =
            [(7, QuestionMeta { question_id: 7, skill_path: vec![1, 2, 10] })].into();
        let skills = SkillTree::from_paths([&[1i64, 2, 10][..]]).unwrap();
        let dataset = build_dataset(vec![], questions, std::collections::HashMap::new(), skills).unwrap();
        let p = predict_skill_cf(&model, &matrix, &dataset, 1, 7);
        let prior = model.global_mean.clamp(1e-4, 1.0 - 1e-4);
        let expected = (45.0 + SMOOTHING_ALPHA * prior) / (50.0 + SMOOTHING_ALPHA);
        assert!((p - expected).abs() < 1e-12);
        assert!(p > 0.8, "bypass should stay near the observed mean, got {p}");
    }

    #[test]
    fn cold_start_predictions_are_probabilities() {
        let dataset = tiny_dataset();
        let matrix = build_skill_matrix(&dataset, &all_train(&dataset));
        let model = factorize(&matrix, &FactorParams::default()).unwrap();
        let p = predict_skill_cf(&model, &matrix, &dataset, 424242, 0);
        assert!(p > 0.0 && p < 1.0);
        let p = predict_skill_cf(&model, &matrix, &dataset, 5, 999); // unknown question
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn predictions_track_generative_truth() {
        let (dataset, truth) = generate_synthetic(&SynthConfig {
            n_users: 150,
            n_questions: 60,
            n_quizzes: 6,
            n_skills: 12,
            responses_per_user: 50,
            learning_rate_per_response: 0.0,
            seed: 11,
            ..SynthConfig::default()
        })
        .unwrap();
        let split = all_train(&dataset);
        let matrix = build_skill_matrix(&dataset, &split);
        let model = factorize(&matrix, &FactorParams { k: 8, seed: 1, ..FactorParams::default() }).unwrap();
        let mut predicted = Vec::new();
        let mut expected = Vec::new();
        for x in dataset.interactions.iter().step_by(7) {
            predicted.push(predict_skill_cf(&model, &matrix, &dataset, x.user_id, x.question_id));
            expected.push(two_pl_probability(
                truth.discrimination[x.question_id as usize],
                truth.theta0[x.user_id as usize],
                truth.difficulty[x.question_id as usize],
            ));
        }
        let r = pearson(&predicted, &expected);
        assert!(r > 0.5, "correlation with generative truth {r}");
    }
}
