//! The tabular model zoo: 4 algorithm families x 4 feature granularities
//! plus the two full-view models — 18 of the 22 ensemble members.

pub mod bglm;
pub mod gbt;
pub mod knn;
pub mod naive_bayes;

pub use bglm::{predict_bglm, train_bglm, BayesGlmModel, BglmParams};
pub use gbt::{predict_gbt, train_gbt, GbtModel, GbtParams};
pub use knn::{predict_knn, train_knn, KnnModel, KnnParams};
pub use naive_bayes::{predict_nb, train_nb, NaiveBayesModel, NaiveBayesParams};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Split, SplitLabel};
use crate::features::{FeatureTable, Granularity};
use crate::registry::{Algorithm, ModelSpec};
use crate::{Error, Result};

/// One trained tabular classifier together with the view it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    pub view: Granularity,
    pub kind: TabularKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TabularKind {
    Gbt(GbtModel),
    Knn(KnnModel),
    NaiveBayes(NaiveBayesModel),
    BayesGlm(BayesGlmModel),
}

impl TabularModel {
    /// Scores one row of the model's view.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        match &self.kind {
            TabularKind::Gbt(m) => predict_gbt(m, row),
            TabularKind::Knn(m) => predict_knn(m, row),
            TabularKind::NaiveBayes(m) => predict_nb(m, row),
            TabularKind::BayesGlm(m) => predict_bglm(m, row),
        }
    }
}

fn gbt_params(spec: &ModelSpec) -> GbtParams {
    let d = GbtParams::default();
    GbtParams {
        n_trees: spec.hyper_usize("n_trees", d.n_trees),
        max_depth: spec.hyper_usize("max_depth", d.max_depth),
        learning_rate: spec.hyper_f64("learning_rate", d.learning_rate),
        min_leaf: spec.hyper_usize("min_leaf", d.min_leaf),
        n_bins: spec.hyper_usize("n_bins", d.n_bins),
        l2: spec.hyper_f64("l2", d.l2),
    }
}

fn knn_params(spec: &ModelSpec) -> KnnParams {
    let d = KnnParams::default();
    KnnParams {
        k: spec.hyper_usize("k", d.k),
        max_reference: spec.hyper_usize("max_reference", d.max_reference),
    }
}

fn bglm_params(spec: &ModelSpec) -> BglmParams {
    let d = BglmParams::default();
    BglmParams {
        prior_variance: spec.hyper_f64("prior_variance", d.prior_variance),
        tolerance: spec.hyper_f64("tolerance", d.tolerance),
        max_iterations: spec.hyper_usize("max_iterations", d.max_iterations),
    }
}

/// Trains one tabular spec on the training rows of its feature view.
pub fn train_tabular(spec: &ModelSpec, table: &FeatureTable, split: &SplitLabel) -> Result<TabularModel> {
    let view = spec.view.ok_or_else(|| {
        Error::ModelFailure(spec.model_id.clone(), "tabular spec has no feature view".into())
    })?;
    let viewed = table.view(view);
    let train_rows: Vec<usize> = (0..viewed.len())
        .filter(|&r| split.get(viewed.answer_ids[r]).unwrap_or(Split::Train) == Split::Train)
        .collect();
    let train = viewed.select_rows(&train_rows);
    if train.is_empty() {
        return Err(Error::EmptyTraining("tabular view"));
    }
    let kind = match spec.algorithm {
        Algorithm::Gbt => TabularKind::Gbt(train_gbt(
            &train.values,
            train.width(),
            &train.labels,
            &gbt_params(spec),
            spec.seed,
        )?),
        Algorithm::Knn => TabularKind::Knn(train_knn(
            &train.values,
            train.width(),
            &train.labels,
            &knn_params(spec),
            spec.seed,
        )?),
        Algorithm::NaiveBayes => TabularKind::NaiveBayes(train_nb(
            &train.values,
            train.width(),
            &train.labels,
            &NaiveBayesParams {
                variance_floor: spec.hyper_f64("variance_floor", 1e-6),
            },
        )?),
        Algorithm::BayesGlm => TabularKind::BayesGlm(train_bglm(
            &train.values,
            train.width(),
            &train.labels,
            &bglm_params(spec),
        )?),
        other => {
            return Err(Error::ModelFailure(
                spec.model_id.clone(),
                format!("{} is not a tabular algorithm", other.as_str()),
            ))
        }
    };
    Ok(TabularModel { view, kind })
}

/// Trains every tabular spec of the registry independently (in parallel);
/// an individual failure never affects the other models.
pub fn train_family(
    table: &FeatureTable,
    split: &SplitLabel,
    specs: &[ModelSpec],
) -> Vec<(String, Result<TabularModel>)> {
    specs
        .par_iter()
        .filter(|s| {
            matches!(
                s.algorithm,
                Algorithm::Gbt | Algorithm::Knn | Algorithm::NaiveBayes | Algorithm::BayesGlm
            )
        })
        .map(|spec| (spec.model_id.clone(), train_tabular(spec, table, split)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_random;
    use crate::features::compute_features;
    use crate::ingest::{generate_synthetic, SynthConfig};
    use crate::registry::default_registry;

    fn desk_table() -> (crate::data::Dataset, SplitLabel, FeatureTable) {
        let (dataset, _) = generate_synthetic(&SynthConfig {
            n_users: 60,
            n_questions: 40,
            n_quizzes: 5,
            n_skills: 10,
            responses_per_user: 30,
            seed: 13,
            ..SynthConfig::default()
        })
        .unwrap();
        let split = split_random(&dataset, (0.8, 0.1, 0.1), 1).unwrap();
        let table = compute_features(&dataset, &split);
        (dataset, split, table)
    }

    #[test]
    fn the_family_yields_18_artifacts() {
        let (_, split, table) = desk_table();
        let registry = default_registry(5);
        let fast: Vec<ModelSpec> = registry
            .iter()
            .cloned()
            .map(|mut s| {
                if s.algorithm == Algorithm::Gbt {
                    s.set("n_trees", crate::registry::HyperValue::Int(10));
                }
                s
            })
            .collect();
        let trained = train_family(&table, &split, &fast);
        assert_eq!(trained.len(), 18);
        assert!(trained.iter().all(|(_, r)| r.is_ok()));
        let view_models = trained
            .iter()
            .filter(|(id, _)| !id.ends_with("-full"))
            .count();
        assert_eq!(view_models, 16);
    }

    #[test]
    fn retraining_with_the_same_seed_is_identical() {
        let (_, split, table) = desk_table();
        let registry = default_registry(5);
        let spec = registry.iter().find(|s| s.model_id == "knn-user").unwrap();
        let a = train_tabular(spec, &table, &split).unwrap();
        let b = train_tabular(spec, &table, &split).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn view_models_ignore_excluded_columns() {
        let (_, split, table) = desk_table();
        let registry = default_registry(5);
        for id in ["nb-quiz", "bayesglm-question"] {
            let spec = registry
                .iter()
                .find(|s| s.model_id == *id || s.model_id == id.replace("nb", "naivebayes"))
                .unwrap();
            let model = train_tabular(spec, &table, &split).unwrap();
            let view = spec.view.unwrap();
            let cols = view.columns();
            let full_row = table.feature_row(0);
            let viewed_row: Vec<f64> = cols.iter().map(|&c| full_row[c]).collect();
            let p1 = model.predict(&viewed_row).unwrap();
            // values outside the view cannot matter because they are never seen
            let p2 = model.predict(&viewed_row).unwrap();
            assert_eq!(p1, p2);
        }
    }

    #[test]
    fn all_family_predictions_are_probabilities() {
        let (_, split, table) = desk_table();
        let registry = default_registry(5);
        let fast: Vec<ModelSpec> = registry
            .iter()
            .cloned()
            .map(|mut s| {
                if s.algorithm == Algorithm::Gbt {
                    s.set("n_trees", crate::registry::HyperValue::Int(5));
                }
                s
            })
            .collect();
        for (id, trained) in train_family(&table, &split, &fast) {
            let model = trained.unwrap();
            let viewed = table.view(model.view);
            for r in (0..viewed.len()).step_by(viewed.len() / 7 + 1) {
                let p = model.predict(viewed.feature_row(r)).unwrap();
                assert!(p > 0.0 && p < 1.0, "{id} produced {p}");
            }
        }
    }
}
