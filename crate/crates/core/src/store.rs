//! Trained-model store: one slot per registry entry, a uniform scoring
//! interface over all three model families, and the training orchestration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{build_sequences, predict_masked, train, EncoderConfig, KtTransformer, TrainOptions, TrainReport};
use crate::data::{Dataset, SplitLabel};
use crate::features::FeatureTable;
use crate::latent::{
    build_skill_matrix, cluster_questions, factorize, fit_irt_all, fit_irt_clustered, predict_irt,
    ClusterParams, FactorModel, FactorParams, IrtFallback, IrtFitOptions, IrtModelStore,
    QuestionClustering, SkillMatrix,
};
use crate::registry::{Algorithm, ModelSpec};
use crate::tabular::{train_tabular, TabularModel};
use crate::{Error, Result};

/// One probability with a flag telling whether the model scored the row
/// natively or through a fallback rung.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub probability: f64,
    pub native: bool,
}

/// A trained ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    Tabular(TabularModel),
    Attention {
        model: KtTransformer,
        report: TrainReport,
    },
    SkillCf {
        model: FactorModel,
        matrix: SkillMatrix,
    },
    IrtQuiz(IrtModelStore),
    IrtClustered {
        store: IrtModelStore,
        clustering: QuestionClustering,
    },
}

impl TrainedModel {
    /// Scores dataset rows. `None` marks rows the model cannot say anything
    /// informative about (they become MISSING in the prediction matrix).
    pub fn score_rows(
        &self,
        dataset: &Dataset,
        split: &SplitLabel,
        table: &FeatureTable,
        rows: &[usize],
    ) -> Result<Vec<Option<Scored>>> {
        match self {
            TrainedModel::Tabular(model) => {
                let cols = model.view.columns();
                rows.iter()
                    .map(|&r| {
                        let full = table.feature_row(r);
                        let viewed: Vec<f64> = cols.iter().map(|&c| full[c]).collect();
                        model
                            .predict(&viewed)
                            .map(|p| Some(Scored { probability: p, native: true }))
                    })
                    .collect()
            }
            TrainedModel::Attention { model, .. } => {
                let sequences = build_sequences(dataset, split, model.config.max_seq_len);
                let scored = predict_masked(model, &sequences, 16)?;
                let by_answer: std::collections::HashMap<i64, f64> = scored.into_iter().collect();
                Ok(rows
                    .iter()
                    .map(|&r| {
                        let answer_id = dataset.interactions[r].answer_id;
                        by_answer
                            .get(&answer_id)
                            .map(|&p| Scored { probability: p, native: true })
                    })
                    .collect())
            }
            TrainedModel::SkillCf { model, matrix } => Ok(rows
                .iter()
                .map(|&r| {
                    let x = &dataset.interactions[r];
                    let leaf = dataset.questions.get(&x.question_id).map(|m| m.leaf_skill());
                    let known_skill = leaf.map(|l| matrix.skill_index.contains_key(&l)).unwrap_or(false);
                    if !known_skill {
                        return None;
                    }
                    let known_user = matrix.user_index.contains_key(&x.user_id);
                    let p = crate::latent::predict_skill_cf(model, matrix, dataset, x.user_id, x.question_id);
                    Some(Scored { probability: p, native: known_user })
                })
                .collect()),
            TrainedModel::IrtQuiz(store) | TrainedModel::IrtClustered { store, .. } => Ok(rows
                .iter()
                .map(|&r| {
                    let x = &dataset.interactions[r];
                    let (p, fallback) = predict_irt(store, x.user_id, x.question_id, x.quiz_id);
                    match fallback {
                        IrtFallback::BaseRate => None,
                        IrtFallback::Native => Some(Scored { probability: p, native: true }),
                        _ => Some(Scored { probability: p, native: false }),
                    }
                })
                .collect()),
        }
    }
}

/// Registry-ordered trained models; failed slots stay empty and are listed
/// in `failures`.
pub struct ModelStore {
    pub specs: Vec<ModelSpec>,
    pub models: Vec<Option<TrainedModel>>,
    pub failures: Vec<(String, String)>,
    /// The split the members were trained under (needed to rebuild masked
    /// sequences at scoring time).
    pub split: SplitLabel,
}

impl ModelStore {
    pub fn get(&self, model_id: &str) -> Option<&TrainedModel> {
        self.specs
            .iter()
            .position(|s| s.model_id == model_id)
            .and_then(|i| self.models[i].as_ref())
    }
}

fn encoder_config(spec: &ModelSpec) -> EncoderConfig {
    let d = EncoderConfig::desk_default();
    EncoderConfig {
        d_model: spec.hyper_usize("d_model", d.d_model),
        n_heads: spec.hyper_usize("n_heads", d.n_heads),
        n_blocks: spec.hyper_usize("n_blocks", d.n_blocks),
        d_ff: spec.hyper_usize("d_ff", d.d_ff),
        max_seq_len: spec.hyper_usize("max_seq_len", d.max_seq_len),
        mask_prob: spec.hyper_f64("mask_prob", d.mask_prob),
        dropout: spec.hyper_f64("dropout", d.dropout),
        seed: spec.seed,
    }
}

fn irt_options(spec: &ModelSpec) -> IrtFitOptions {
    let d = IrtFitOptions::default();
    IrtFitOptions {
        tolerance: spec.hyper_f64("tolerance", d.tolerance),
        max_iterations: spec.hyper_usize("max_iterations", d.max_iterations),
        priors: d.priors,
    }
}

/// Trains one registry entry.
pub fn train_one(
    spec: &ModelSpec,
    dataset: &Dataset,
    split: &SplitLabel,
    table: &FeatureTable,
) -> Result<TrainedModel> {
    match spec.algorithm {
        Algorithm::Gbt | Algorithm::Knn | Algorithm::NaiveBayes | Algorithm::BayesGlm => {
            Ok(TrainedModel::Tabular(train_tabular(spec, table, split)?))
        }
        Algorithm::AttentionKt => {
            let config = encoder_config(spec);
            let sequences = build_sequences(dataset, split, config.max_seq_len);
            let train_seqs: Vec<_> = sequences
                .iter()
                .filter(|s| s.known.iter().any(|&k| k))
                .cloned()
                .collect();
            if train_seqs.is_empty() {
                return Err(Error::EmptyTraining("attention sequences"));
            }
            let mut model = KtTransformer::new(config, dataset.n_questions())?;
            let opts = TrainOptions {
                batch_size: spec.hyper_usize("batch_size", 16),
                learning_rate: spec.hyper_f64("learning_rate", 1e-4),
                epochs: spec.hyper_usize("epochs", 3),
                seed: spec.seed,
                max_steps: spec.hyperparameters.get("max_steps").and_then(|v| v.as_usize()),
                patience: spec.hyper_usize("patience", 3),
            };
            let report = train(&mut model, &train_seqs, None, &opts)?;
            Ok(TrainedModel::Attention { model, report })
        }
        Algorithm::SkillCf => {
            let matrix = build_skill_matrix(dataset, split);
            let params = FactorParams {
                k: spec.hyper_usize("k", 16),
                l2: spec.hyper_f64("l2", 0.1),
                iterations: spec.hyper_usize("iterations", 50),
                observed_bypass_total: spec.hyper_usize("observed_bypass_total", 20) as u64,
                seed: spec.seed,
            };
            let model = factorize(&matrix, &params)?;
            Ok(TrainedModel::SkillCf { model, matrix })
        }
        Algorithm::IrtQuiz => Ok(TrainedModel::IrtQuiz(fit_irt_all(dataset, split, &irt_options(spec))?)),
        Algorithm::IrtClustered => {
            let params = ClusterParams {
                min_co_attempts: spec.hyper_usize("min_co_attempts", 5) as u64,
                target_cluster_size: spec.hyperparameters.get("target_cluster_size").and_then(|v| v.as_f64()),
            };
            let clustering = cluster_questions(dataset, split, &params);
            let store = fit_irt_clustered(dataset, split, &clustering.assignment, &irt_options(spec))?;
            Ok(TrainedModel::IrtClustered { store, clustering })
        }
    }
}

/// Trains every registry entry. Tabular members train in parallel; an
/// individual failure is recorded and never sinks the rest.
pub fn train_all(
    registry: &[ModelSpec],
    dataset: &Dataset,
    split: &SplitLabel,
    table: &FeatureTable,
) -> ModelStore {
    let results: Vec<Result<TrainedModel>> = registry
        .par_iter()
        .map(|spec| train_one(spec, dataset, split, table))
        .collect();
    let mut models = Vec::with_capacity(registry.len());
    let mut failures = Vec::new();
    for (spec, result) in registry.iter().zip(results) {
        match result {
            Ok(m) => models.push(Some(m)),
            Err(e) => {
                failures.push((spec.model_id.clone(), e.to_string()));
                models.push(None);
            }
        }
    }
    ModelStore { specs: registry.to_vec(), models, failures, split: split.clone() }
}
