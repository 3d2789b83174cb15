//! Two-parameter logistic IRT, fitted quiz by quiz (or cluster by cluster).
//!
//! MAP estimation by alternating blockwise gradient ascent with backtracking
//! line search: the ability block first, then the item block. Abilities are
//! kept standardized (mean 0, sd 1) throughout; the rescale is folded into
//! the ability step together with the compensating `(a, b)` transform that
//! leaves the data likelihood unchanged, and a step is only accepted when
//! the penalized log-likelihood does not decrease — so the recorded trace is
//! non-decreasing by construction.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, SplitLabel};
use crate::features::SMOOTHING_ALPHA;
use crate::math::{logit, sigmoid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrtPriors {
    pub theta_sd: f64,
    pub difficulty_sd: f64,
    pub log_discrimination_sd: f64,
}

impl Default for IrtPriors {
    fn default() -> Self {
        IrtPriors { theta_sd: 1.0, difficulty_sd: 1.0, log_discrimination_sd: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrtFitOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub priors: IrtPriors,
}

impl Default for IrtFitOptions {
    fn default() -> Self {
        IrtFitOptions { tolerance: 1e-5, max_iterations: 200, priors: IrtPriors::default() }
    }
}

/// Fitted 2-PL parameters for one quiz (or one question cluster).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizIrtModel {
    pub key: i64,
    pub theta: BTreeMap<i64, f64>,
    /// question -> (discrimination, difficulty)
    pub items: BTreeMap<i64, (f64, f64)>,
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    /// True when the quiz was too degenerate for joint estimation and the
    /// smoothed-mean fallback was used instead.
    pub degenerate: bool,
}

/// Data log-likelihood of responses under `sigmoid(a_j (theta_i - b_j))`.
pub fn two_pl_data_ll(responses: &[(usize, usize, u8)], theta: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ll = 0.0;
    for &(i, j, y) in responses {
        let z = a[j] * (theta[i] - b[j]);
        ll += if y == 1 { crate::math::log_sigmoid(z) } else { crate::math::log_sigmoid(-z) };
    }
    ll
}

/// Penalized log-likelihood and its gradient with respect to
/// `(theta, difficulty, log discrimination)`.
pub fn penalized_ll_and_grad(
    responses: &[(usize, usize, u8)],
    theta: &[f64],
    log_a: &[f64],
    b: &[f64],
    priors: &IrtPriors,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = log_a.iter().map(|l| l.exp()).collect();
    let mut ll = two_pl_data_ll(responses, theta, &a, b);
    let mut g_theta = vec![0.0; theta.len()];
    let mut g_log_a = vec![0.0; a.len()];
    let mut g_b = vec![0.0; b.len()];
    for &(i, j, y) in responses {
        let z = a[j] * (theta[i] - b[j]);
        let e = y as f64 - sigmoid(z);
        g_theta[i] += a[j] * e;
        g_b[j] -= a[j] * e;
        g_log_a[j] += a[j] * (theta[i] - b[j]) * e;
    }
    let vt = priors.theta_sd * priors.theta_sd;
    let vb = priors.difficulty_sd * priors.difficulty_sd;
    let va = priors.log_discrimination_sd * priors.log_discrimination_sd;
    for (i, t) in theta.iter().enumerate() {
        ll -= t * t / (2.0 * vt);
        g_theta[i] -= t / vt;
    }
    for j in 0..b.len() {
        ll -= b[j] * b[j] / (2.0 * vb);
        g_b[j] -= b[j] / vb;
        ll -= log_a[j] * log_a[j] / (2.0 * va);
        g_log_a[j] -= log_a[j] / va;
    }
    (ll, g_theta, g_log_a, g_b)
}

/// Standardizes theta in place and rescales `(log_a, b)` so the data
/// likelihood is unchanged. No-op when the spread is numerically zero.
fn standardize(theta: &mut [f64], log_a: &mut [f64], b: &mut [f64]) {
    let n = theta.len() as f64;
    if theta.len() < 2 {
        return;
    }
    let mean = theta.iter().sum::<f64>() / n;
    let sd = (theta.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n).sqrt();
    if sd > 1e-8 {
        for t in theta.iter_mut() {
            *t = (*t - mean) / sd;
        }
        for la in log_a.iter_mut() {
            *la += sd.ln();
        }
        for bj in b.iter_mut() {
            *bj = (*bj - mean) / sd;
        }
    } else {
        for t in theta.iter_mut() {
            *t -= mean;
        }
        for bj in b.iter_mut() {
            *bj -= mean;
        }
    }
}

struct QuizData {
    users: Vec<i64>,
    questions: Vec<i64>,
    /// (user index, item index, correctness)
    responses: Vec<(usize, usize, u8)>,
}

fn index_quiz(rows: &[(i64, i64, u8)]) -> QuizData {
    let mut users: Vec<i64> = rows.iter().map(|r| r.0).collect();
    users.sort_unstable();
    users.dedup();
    let mut questions: Vec<i64> = rows.iter().map(|r| r.1).collect();
    questions.sort_unstable();
    questions.dedup();
    let u_idx: HashMap<i64, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let q_idx: HashMap<i64, usize> = questions.iter().enumerate().map(|(i, &q)| (q, i)).collect();
    let responses = rows.iter().map(|&(u, q, y)| (u_idx[&u], q_idx[&q], y)).collect();
    QuizData { users, questions, responses }
}

fn smoothed(success: f64, total: f64, prior: f64) -> f64 {
    (success + SMOOTHING_ALPHA * prior) / (total + SMOOTHING_ALPHA)
}

fn fallback_model(key: i64, data: &QuizData) -> QuizIrtModel {
    let overall = {
        let s: f64 = data.responses.iter().map(|r| r.2 as f64).sum();
        (s / data.responses.len().max(1) as f64).clamp(0.05, 0.95)
    };
    let mut user_succ = vec![(0.0, 0.0); data.users.len()];
    let mut item_succ = vec![(0.0, 0.0); data.questions.len()];
    for &(i, j, y) in &data.responses {
        user_succ[i].0 += y as f64;
        user_succ[i].1 += 1.0;
        item_succ[j].0 += y as f64;
        item_succ[j].1 += 1.0;
    }
    let theta = data
        .users
        .iter()
        .zip(&user_succ)
        .map(|(&u, &(s, t))| (u, logit(smoothed(s, t, overall))))
        .collect();
    let items = data
        .questions
        .iter()
        .zip(&item_succ)
        .map(|(&q, &(s, t))| (q, (1.0, -logit(smoothed(s, t, overall)))))
        .collect();
    QuizIrtModel {
        key,
        theta,
        items,
        log_likelihood_trace: Vec::new(),
        iterations: 0,
        degenerate: true,
    }
}

/// Fits one quiz. `rows` are `(user_id, question_id, is_correct)` triples of
/// the quiz's training responses.
pub fn fit_irt_quiz(key: i64, rows: &[(i64, i64, u8)], options: &IrtFitOptions) -> QuizIrtModel {
    let data = index_quiz(rows);
    let n_users = data.users.len();
    let n_items = data.questions.len();
    let classes: std::collections::HashSet<u8> = data.responses.iter().map(|r| r.2).collect();
    if n_users < 2 || n_items < 2 || classes.len() < 2 {
        return fallback_model(key, &data);
    }

    // smoothed starting values, standardized
    let overall = {
        let s: f64 = data.responses.iter().map(|r| r.2 as f64).sum();
        (s / data.responses.len() as f64).clamp(0.05, 0.95)
    };
    let mut user_succ = vec![(0.0, 0.0); n_users];
    let mut item_succ = vec![(0.0, 0.0); n_items];
    for &(i, j, y) in &data.responses {
        user_succ[i].0 += y as f64;
        user_succ[i].1 += 1.0;
        item_succ[j].0 += y as f64;
        item_succ[j].1 += 1.0;
    }
    let mut theta: Vec<f64> = user_succ.iter().map(|&(s, t)| logit(smoothed(s, t, overall))).collect();
    let mut log_a = vec![0.0; n_items];
    let mut b: Vec<f64> = item_succ.iter().map(|&(s, t)| -logit(smoothed(s, t, overall))).collect();
    standardize(&mut theta, &mut log_a, &mut b);

    let (mut ll, _, _, _) = penalized_ll_and_grad(&data.responses, &theta, &log_a, &b, &options.priors);
    let mut trace = Vec::with_capacity(options.max_iterations);
    let mut theta_step = 0.1;
    let mut item_step = 0.1;
    let mut iterations = 0;

    for _ in 0..options.max_iterations {
        iterations += 1;
        let ll_before_iter = ll;

        // ability block: gradient step followed by the likelihood-invariant
        // standardization, accepted only if the penalized objective holds
        let (_, g_theta, _, _) = penalized_ll_and_grad(&data.responses, &theta, &log_a, &b, &options.priors);
        let mut accepted = false;
        let mut eta = theta_step;
        for _ in 0..30 {
            let mut t_new: Vec<f64> = theta.iter().zip(&g_theta).map(|(t, g)| t + eta * g).collect();
            let mut la_new = log_a.clone();
            let mut b_new = b.clone();
            standardize(&mut t_new, &mut la_new, &mut b_new);
            let (ll_new, _, _, _) =
                penalized_ll_and_grad(&data.responses, &t_new, &la_new, &b_new, &options.priors);
            if ll_new >= ll {
                theta = t_new;
                log_a = la_new;
                b = b_new;
                ll = ll_new;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        theta_step = if accepted { (eta * 1.5).min(1.0) } else { (theta_step * 0.5).max(1e-9) };

        // item block
        let (_, _, g_log_a, g_b) = penalized_ll_and_grad(&data.responses, &theta, &log_a, &b, &options.priors);
        let mut accepted = false;
        let mut eta = item_step;
        for _ in 0..30 {
            let la_new: Vec<f64> = log_a.iter().zip(&g_log_a).map(|(x, g)| x + eta * g).collect();
            let b_new: Vec<f64> = b.iter().zip(&g_b).map(|(x, g)| x + eta * g).collect();
            let (ll_new, _, _, _) =
                penalized_ll_and_grad(&data.responses, &theta, &la_new, &b_new, &options.priors);
            if ll_new >= ll {
                log_a = la_new;
                b = b_new;
                ll = ll_new;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        item_step = if accepted { (eta * 1.5).min(1.0) } else { (item_step * 0.5).max(1e-9) };

        trace.push(ll);
        if ll - ll_before_iter < options.tolerance {
            break;
        }
    }

    QuizIrtModel {
        key,
        theta: data.users.iter().copied().zip(theta).collect(),
        items: data
            .questions
            .iter()
            .copied()
            .zip(log_a.iter().zip(&b).map(|(la, &bj)| (la.exp(), bj)))
            .collect(),
        log_likelihood_trace: trace,
        iterations,
        degenerate: false,
    }
}

/// Which rung of the fallback ladder produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrtFallback {
    /// Fitted theta and fitted item parameters.
    Native,
    /// Item fitted, ability proxied by the user's overall smoothed rate.
    ThetaProxy,
    /// Item fitted, ability defaulted to the prior mean 0.
    ThetaDefault,
    /// No item parameters; the question's smoothed training mean.
    ItemFallback,
    /// Nothing known; the global training base rate.
    BaseRate,
}

/// Per-quiz (or per-cluster) models plus the smoothed aggregates backing
/// the prediction fallback ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtModelStore {
    pub models: BTreeMap<i64, QuizIrtModel>,
    /// For clustered stores: question -> cluster key. Per-quiz stores key by
    /// the row's own quiz id.
    pub question_to_key: Option<BTreeMap<i64, i64>>,
    pub user_smoothed: BTreeMap<i64, f64>,
    pub question_smoothed: BTreeMap<i64, f64>,
    pub base_rate: f64,
}

impl IrtModelStore {
    fn key_for(&self, question: i64, quiz: i64) -> i64 {
        match &self.question_to_key {
            Some(map) => map.get(&question).copied().unwrap_or(quiz),
            None => quiz,
        }
    }
}

/// Walks the fallback ladder and returns the probability plus the rung used.
pub fn predict_irt(store: &IrtModelStore, user: i64, question: i64, quiz: i64) -> (f64, IrtFallback) {
    let key = store.key_for(question, quiz);
    if let Some(model) = store.models.get(&key) {
        if let Some(&(a, b)) = model.items.get(&question) {
            if let Some(&theta) = model.theta.get(&user) {
                return (crate::math::clamp_prob(sigmoid(a * (theta - b))), IrtFallback::Native);
            }
            if let Some(&rate) = store.user_smoothed.get(&user) {
                return (crate::math::clamp_prob(sigmoid(logit(rate) - b)), IrtFallback::ThetaProxy);
            }
            return (crate::math::clamp_prob(sigmoid(-b)), IrtFallback::ThetaDefault);
        }
    }
    if let Some(&rate) = store.question_smoothed.get(&question) {
        return (crate::math::clamp_prob(rate), IrtFallback::ItemFallback);
    }
    (crate::math::clamp_prob(store.base_rate), IrtFallback::BaseRate)
}

fn smoothed_aggregates(
    dataset: &Dataset,
    splits: &[Split],
) -> (BTreeMap<i64, f64>, BTreeMap<i64, f64>, f64) {
    let mut user: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    let mut question: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    let mut success = 0.0;
    let mut total = 0.0;
    for (row, x) in dataset.interactions.iter().enumerate() {
        if splits[row] != Split::Train {
            continue;
        }
        let u = user.entry(x.user_id).or_default();
        u.0 += x.is_correct as f64;
        u.1 += 1.0;
        let q = question.entry(x.question_id).or_default();
        q.0 += x.is_correct as f64;
        q.1 += 1.0;
        success += x.is_correct as f64;
        total += 1.0;
    }
    let base = if total > 0.0 { success / total } else { 0.5 };
    let prior = base.clamp(0.05, 0.95);
    (
        user.into_iter().map(|(k, (s, t))| (k, smoothed(s, t, prior))).collect(),
        question.into_iter().map(|(k, (s, t))| (k, smoothed(s, t, prior))).collect(),
        base,
    )
}

/// Fits one 2-PL model per quiz over the training rows.
pub fn fit_irt_all(dataset: &Dataset, split: &SplitLabel, options: &IrtFitOptions) -> Result<IrtModelStore> {
    let splits = split.row_splits(dataset);
    let mut by_quiz: BTreeMap<i64, Vec<(i64, i64, u8)>> = BTreeMap::new();
    for (row, x) in dataset.interactions.iter().enumerate() {
        if splits[row] == Split::Train {
            by_quiz.entry(x.quiz_id).or_default().push((x.user_id, x.question_id, x.is_correct));
        }
    }
    if by_quiz.is_empty() {
        return Err(Error::EmptyTraining("irt (no training rows)"));
    }
    let models: BTreeMap<i64, QuizIrtModel> = by_quiz
        .into_par_iter()
        .map(|(quiz, rows)| (quiz, fit_irt_quiz(quiz, &rows, options)))
        .collect();
    let (user_smoothed, question_smoothed, base_rate) = smoothed_aggregates(dataset, &splits);
    Ok(IrtModelStore { models, question_to_key: None, user_smoothed, question_smoothed, base_rate })
}

/// Same estimation keyed by co-attempt cluster instead of quiz id.
pub fn fit_irt_clustered(
    dataset: &Dataset,
    split: &SplitLabel,
    assignment: &BTreeMap<i64, i64>,
    options: &IrtFitOptions,
) -> Result<IrtModelStore> {
    let splits = split.row_splits(dataset);
    let mut by_cluster: BTreeMap<i64, Vec<(i64, i64, u8)>> = BTreeMap::new();
    for (row, x) in dataset.interactions.iter().enumerate() {
        if splits[row] == Split::Train {
            let key = assignment.get(&x.question_id).copied().unwrap_or(x.quiz_id);
            by_cluster.entry(key).or_default().push((x.user_id, x.question_id, x.is_correct));
        }
    }
    if by_cluster.is_empty() {
        return Err(Error::EmptyTraining("clustered irt (no training rows)"));
    }
    let models: BTreeMap<i64, QuizIrtModel> = by_cluster
        .into_par_iter()
        .map(|(key, rows)| (key, fit_irt_quiz(key, &rows, options)))
        .collect();
    let (user_smoothed, question_smoothed, base_rate) = smoothed_aggregates(dataset, &splits);
    Ok(IrtModelStore {
        models,
        question_to_key: Some(assignment.clone()),
        user_smoothed,
        question_smoothed,
        base_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{spearman, two_pl_probability};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn synth_quiz(
        n_students: usize,
        n_items: usize,
        responses_each: usize,
        seed: u64,
    ) -> (Vec<(i64, i64, u8)>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..n_students).map(|_| rng.random::<f64>() * 2.4 - 1.2).collect();
        let a: Vec<f64> = (0..n_items).map(|_| (rng.random::<f64>() * 0.6 - 0.3f64).exp()).collect();
        let b: Vec<f64> = (0..n_items).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let mut rows = Vec::new();
        for s in 0..n_students {
            for rep in 0..responses_each {
                let j = (s + rep * 7) % n_items;
                let p = two_pl_probability(a[j], theta[s], b[j]);
                rows.push((s as i64, j as i64, (rng.random::<f64>() < p) as u8));
            }
        }
        (rows, theta, a, b)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (rows, theta, a, b) = synth_quiz(8, 5, 5, 3);
        let data = index_quiz(&rows);
        let priors = IrtPriors::default();
        let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let h = 1e-4;
        for _ in 0..10 {
            // random perturbation point
            let t: Vec<f64> = theta.iter().map(|x| x + rng.random::<f64>() - 0.5).collect();
            let la: Vec<f64> = log_a.iter().map(|x| x + rng.random::<f64>() * 0.4 - 0.2).collect();
            let bb: Vec<f64> = b.iter().map(|x| x + rng.random::<f64>() - 0.5).collect();
            let (_, gt, gla, gb) = penalized_ll_and_grad(&data.responses, &t, &la, &bb, &priors);
            let eval = |t: &[f64], la: &[f64], bb: &[f64]| {
                penalized_ll_and_grad(&data.responses, t, la, bb, &priors).0
            };
            for i in 0..t.len() {
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp[i] += h;
                tm[i] -= h;
                let numeric = (eval(&tp, &la, &bb) - eval(&tm, &la, &bb)) / (2.0 * h);
                let rel = (gt[i] - numeric).abs() / gt[i].abs().max(numeric.abs()).max(1.0);
                assert!(rel <= 1e-6, "theta[{i}]: {} vs {numeric}", gt[i]);
            }
            for j in 0..la.len() {
                let mut lp = la.clone();
                let mut lm = la.clone();
                lp[j] += h;
                lm[j] -= h;
                let numeric = (eval(&t, &lp, &bb) - eval(&t, &lm, &bb)) / (2.0 * h);
                let rel = (gla[j] - numeric).abs() / gla[j].abs().max(numeric.abs()).max(1.0);
                assert!(rel <= 1e-6, "log_a[{j}]: {} vs {numeric}", gla[j]);
                let mut bp = bb.clone();
                let mut bm = bb.clone();
                bp[j] += h;
                bm[j] -= h;
                let numeric = (eval(&t, &la, &bp) - eval(&t, &la, &bm)) / (2.0 * h);
                let rel = (gb[j] - numeric).abs() / gb[j].abs().max(numeric.abs()).max(1.0);
                assert!(rel <= 1e-6, "b[{j}]: {} vs {numeric}", gb[j]);
            }
        }
    }

    #[test]
    fn standardization_preserves_the_data_likelihood() {
        let (rows, theta, a, b) = synth_quiz(12, 6, 6, 9);
        let data = index_quiz(&rows);
        let mut t = theta.clone();
        let mut la: Vec<f64> = a.iter().map(|x| x.ln()).collect();
        let mut bb = b.clone();
        // shift/scale away from standardized so the rescale does something
        for x in t.iter_mut() {
            *x = *x * 1.7 + 0.4;
        }
        let before = two_pl_data_ll(&data.responses, &t, &la.iter().map(|l| l.exp()).collect::<Vec<_>>(), &bb);
        standardize(&mut t, &mut la, &mut bb);
        let after = two_pl_data_ll(&data.responses, &t, &la.iter().map(|l| l.exp()).collect::<Vec<_>>(), &bb);
        assert!((before - after).abs() <= 1e-10, "{before} vs {after}");
        let mean: f64 = t.iter().sum::<f64>() / t.len() as f64;
        let sd: f64 = (t.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-6);
        assert!((sd - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn trace_is_non_decreasing_and_theta_standardized() {
        let (rows, _, _, _) = synth_quiz(40, 12, 12, 5);
        let model = fit_irt_quiz(7, &rows, &IrtFitOptions::default());
        assert!(!model.degenerate);
        for pair in model.log_likelihood_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12, "trace fell: {} -> {}", pair[0], pair[1]);
        }
        let thetas: Vec<f64> = model.theta.values().copied().collect();
        let mean: f64 = thetas.iter().sum::<f64>() / thetas.len() as f64;
        let sd = (thetas.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / thetas.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-6);
        assert!((sd - 1.0).abs() <= 1e-3);
        for &(a, _) in model.items.values() {
            assert!(a > 0.0);
        }
    }

    #[test]
    fn a_perfect_student_gets_the_top_ability() {
        let (mut rows, _, _, _) = synth_quiz(20, 8, 8, 13);
        // student 99 answers everything correctly
        for j in 0..8 {
            rows.push((99, j, 1));
        }
        let model = fit_irt_quiz(0, &rows, &IrtFitOptions::default());
        let best = model.theta[&99];
        for (&user, &t) in &model.theta {
            if user != 99 {
                assert!(best >= t, "user {user} has theta {t} above the perfect student's {best}");
            }
        }
    }

    #[test]
    fn difficulty_is_recovered_near_zero_for_even_items() {
        // items with b = 0 answered by theta ~ N(0,1) students come out near 0
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut rows = Vec::new();
        let n_students = 300;
        for s in 0..n_students {
            let theta: f64 = rng.random::<f64>() * 2.0 - 1.0;
            for j in 0..10i64 {
                let b = if j == 0 { 0.0 } else { (j as f64 - 5.0) / 3.0 };
                let p = two_pl_probability(1.0, theta, b);
                rows.push((s as i64, j, (rng.random::<f64>() < p) as u8));
            }
        }
        let model = fit_irt_quiz(0, &rows, &IrtFitOptions::default());
        let (_, b0) = model.items[&0];
        assert!(b0.abs() <= 0.2, "recovered difficulty {b0}");
    }

    #[test]
    fn recovery_on_a_generated_quiz_is_strong() {
        let (rows, theta, _, b) = synth_quiz(200, 20, 20, 31);
        let model = fit_irt_quiz(0, &rows, &IrtFitOptions::default());
        let fitted_theta: Vec<f64> = (0..theta.len()).map(|u| model.theta[&(u as i64)]).collect();
        let rho_theta = spearman(&fitted_theta, &theta);
        let fitted_b: Vec<f64> = (0..b.len()).map(|j| model.items[&(j as i64)].1).collect();
        let rho_b = spearman(&fitted_b, &b);
        assert!(rho_theta >= 0.8, "theta rank correlation {rho_theta}");
        assert!(rho_b >= 0.8, "difficulty rank correlation {rho_b}");
    }

    #[test]
    fn degenerate_quizzes_fall_back_to_smoothed_means() {
        // single question
        let rows = vec![(1, 7, 1), (2, 7, 0), (3, 7, 1)];
        let model = fit_irt_quiz(4, &rows, &IrtFitOptions::default());
        assert!(model.degenerate);
        assert_eq!(model.items[&7].0, 1.0);
        // single class
        let rows = vec![(1, 7, 1), (2, 8, 1), (3, 7, 1)];
        let model = fit_irt_quiz(4, &rows, &IrtFitOptions::default());
        assert!(model.degenerate);
    }

    #[test]
    fn closed_form_prediction_values() {
        let mut store = IrtModelStore {
            models: BTreeMap::new(),
            question_to_key: None,
            user_smoothed: BTreeMap::new(),
            question_smoothed: BTreeMap::new(),
            base_rate: 0.61,
        };
        let mut model = QuizIrtModel {
            key: 1,
            theta: BTreeMap::new(),
            items: BTreeMap::new(),
            log_likelihood_trace: vec![],
            iterations: 0,
            degenerate: false,
        };
        model.theta.insert(10, 0.75);
        model.items.insert(100, (1.0, 0.75)); // theta == b
        model.items.insert(101, (1.0, -0.25)); // theta - b = 1
        store.models.insert(1, model);

        let (p, f) = predict_irt(&store, 10, 100, 1);
        assert_eq!(f, IrtFallback::Native);
        assert!((p - 0.5).abs() < 1e-12);
        let (p, _) = predict_irt(&store, 10, 101, 1);
        assert!((p - 0.7310585786300049).abs() < 1e-9);
        // fully missing entities end at the base rate
        let (p, f) = predict_irt(&store, 999, 999, 999);
        assert_eq!(f, IrtFallback::BaseRate);
        assert!((p - 0.61).abs() < 1e-12);
    }

    #[test]
    fn prediction_is_monotone_in_theta_and_antitone_in_b() {
        let a = 1.3;
        let mut last = 0.0;
        for i in 0..20 {
            let theta = -2.0 + i as f64 * 0.2;
            let p = sigmoid(a * (theta - 0.3));
            assert!(p > last);
            last = p;
        }
        let mut last = 1.0;
        for j in 0..20 {
            let b = -2.0 + j as f64 * 0.2;
            let p = sigmoid(a * (0.3 - b));
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn clustered_fit_with_identity_clustering_matches_per_quiz() {
        let (dataset, _) = crate::ingest::generate_synthetic(&crate::ingest::SynthConfig {
            n_users: 60,
            n_questions: 30,
            n_quizzes: 5,
            n_skills: 8,
            responses_per_user: 30,
            seed: 17,
            ..crate::ingest::SynthConfig::default()
        })
        .unwrap();
        let split = crate::data::split_random(&dataset, (0.9, 0.05, 0.05), 1).unwrap();
        let per_quiz = fit_irt_all(&dataset, &split, &IrtFitOptions::default()).unwrap();

        // identity clustering: each question mapped to its quiz id
        let mut assignment = BTreeMap::new();
        for x in &dataset.interactions {
            assignment.insert(x.question_id, x.quiz_id);
        }
        let clustered = fit_irt_clustered(&dataset, &split, &assignment, &IrtFitOptions::default()).unwrap();

        for x in dataset.interactions.iter().step_by(11) {
            let (pa, _) = predict_irt(&per_quiz, x.user_id, x.question_id, x.quiz_id);
            let (pb, _) = predict_irt(&clustered, x.user_id, x.question_id, x.quiz_id);
            assert!((pa - pb).abs() <= 1e-9, "{pa} vs {pb}");
        }
    }
}
