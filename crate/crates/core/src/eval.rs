//! Metrics and the end-to-end experiment runner.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, SplitLabel};
use crate::ensemble::{collect_predictions, fit_weights, predict_ensemble, EnsembleWeights, FitOptions};
use crate::features::compute_features;
use crate::registry::ModelSpec;
use crate::store::{train_all, ModelStore};
use crate::{Error, Result};

/// Per-model evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub accuracy: f64,
    pub log_loss: f64,
    /// Absent when the labels are single-class.
    pub auc: Option<f64>,
    pub n: usize,
    /// Fraction of rows scored natively, before any fallback.
    pub coverage: f64,
    /// Populated at runtime, never serialized: reports must be
    /// byte-identical across reruns of the same seed.
    #[serde(skip)]
    pub wall_time_ms: u128,
}

/// Fraction of rows where thresholded prediction matches the label.
/// `p == threshold` counts as a positive prediction.
pub fn accuracy(predictions: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            shapes: format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        });
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= threshold) == (y == 1))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean binary cross-entropy with predictions clipped to [1e-12, 1-1e-12].
pub fn log_loss(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "log_loss",
            shapes: format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        });
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Area under the ROC curve via the rank statistic with tie-averaged ranks.
/// Returns `None` when only one class is present.
pub fn auc(predictions: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "auc",
            shapes: format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&i, &j| predictions[i].total_cmp(&predictions[j]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && predictions[order[j + 1]] == predictions[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// Full experiment outcome: one report per registry model plus the ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub per_model: Vec<MetricReport>,
    pub ensemble: MetricReport,
    pub weights: Vec<(String, f64)>,
    pub warnings: Vec<String>,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Artifact files written during the run, relative to the run directory.
    pub artifacts: Vec<PathBuf>,
}

impl ExperimentReport {
    /// Human-readable table, one line per model plus the ensemble.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>9} {:>9} {:>7} {:>7} {:>9} {:>8}\n",
            "model", "accuracy", "log_loss", "auc", "n", "coverage", "weight"
        ));
        let weight_of = |id: &str| {
            self.weights
                .iter()
                .find(|(m, _)| m == id)
                .map(|(_, w)| format!("{w:.4}"))
                .unwrap_or_else(|| "-".into())
        };
        for r in &self.per_model {
            out.push_str(&format!(
                "{:<16} {:>9.4} {:>9.4} {:>7} {:>7} {:>9.3} {:>8}\n",
                r.model_id,
                r.accuracy,
                r.log_loss,
                r.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
                r.n,
                r.coverage,
                weight_of(&r.model_id),
            ));
        }
        let e = &self.ensemble;
        out.push_str(&format!(
            "{:<16} {:>9.4} {:>9.4} {:>7} {:>7} {:>9.3} {:>8}\n",
            e.model_id,
            e.accuracy,
            e.log_loss,
            e.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
            e.n,
            e.coverage,
            "-",
        ));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }

    /// Machine CSV: one row per model plus the ensemble.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("model_id,accuracy,log_loss,auc,n,coverage,weight\n");
        let weight_of = |id: &str| {
            self.weights
                .iter()
                .find(|(m, _)| m == id)
                .map(|(_, w)| w.to_string())
                .unwrap_or_default()
        };
        for r in &self.per_model {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.model_id,
                r.accuracy,
                r.log_loss,
                r.auc.map(|a| a.to_string()).unwrap_or_default(),
                r.n,
                r.coverage,
                weight_of(&r.model_id),
            ));
        }
        let e = &self.ensemble;
        out.push_str(&format!(
            "{},{},{},{},{},{},\n",
            e.model_id,
            e.accuracy,
            e.log_loss,
            e.auc.map(|a| a.to_string()).unwrap_or_default(),
            e.n,
            e.coverage,
        ));
        out
    }
}

fn score_column(
    model_id: &str,
    predictions: &[Option<f64>],
    labels: &[u8],
    base_rate: f64,
    coverage: f64,
) -> Result<MetricReport> {
    // Every row is scored: MISSING entries fall back to the base rate so the
    // per-model n always equals the evaluation row count.
    let filled: Vec<f64> = predictions.iter().map(|p| p.unwrap_or(base_rate)).collect();
    Ok(MetricReport {
        model_id: model_id.to_string(),
        accuracy: accuracy(&filled, labels, 0.5)?,
        log_loss: log_loss(&filled, labels)?,
        auc: auc(&filled, labels)?,
        n: labels.len(),
        coverage,
        wall_time_ms: 0,
    })
}

/// Trains every registry model, fits ensemble weights on the validation
/// split, and scores the test split. Fully deterministic given the seed
/// embedded in the registry specs.
pub fn run_experiment(
    dataset: &Dataset,
    split: &SplitLabel,
    registry: &[ModelSpec],
    seed: u64,
) -> Result<ExperimentReport> {
    let table = compute_features(dataset, split);
    let splits = split.row_splits(dataset);
    let val_rows: Vec<usize> = (0..dataset.n_interactions())
        .filter(|&r| splits[r] == Split::Validation)
        .collect();
    let test_rows: Vec<usize> = (0..dataset.n_interactions())
        .filter(|&r| splits[r] == Split::Test)
        .collect();
    let n_train = dataset.n_interactions() - val_rows.len() - test_rows.len();

    let store = train_all(registry, dataset, split, &table);
    let mut warnings: Vec<String> = store
        .failures
        .iter()
        .map(|(id, err)| format!("model '{id}' failed to train and is excluded: {err}"))
        .collect();

    let base_rate = training_base_rate(dataset, &splits);

    let val_matrix = collect_predictions(&store, dataset, &table, &val_rows);
    let val_labels: Vec<u8> = val_rows.iter().map(|&r| dataset.interactions[r].is_correct).collect();
    let weights = fit_weights(&val_matrix, &val_labels, &FitOptions::default())?;

    let test_matrix = collect_predictions(&store, dataset, &table, &test_rows);
    let test_labels: Vec<u8> = test_rows.iter().map(|&r| dataset.interactions[r].is_correct).collect();

    let mut per_model = Vec::with_capacity(registry.len());
    for (m, spec) in registry.iter().enumerate() {
        let column: Vec<Option<f64>> = (0..test_rows.len()).map(|r| test_matrix.get(r, m)).collect();
        let covered = column.iter().filter(|p| p.is_some()).count();
        let native = test_matrix.native_count(m);
        per_model.push(score_column(
            &spec.model_id,
            &column,
            &test_labels,
            base_rate,
            native as f64 / test_rows.len().max(1) as f64,
        )?);
        if covered == 0 {
            warnings.push(format!("model '{}' scored no test rows", spec.model_id));
        }
    }

    let ensemble_preds: Vec<f64> = (0..test_rows.len())
        .map(|r| predict_ensemble(&weights, &test_matrix.row(r), base_rate).0)
        .collect();
    let ensemble = MetricReport {
        model_id: "ensemble".into(),
        accuracy: accuracy(&ensemble_preds, &test_labels, 0.5)?,
        log_loss: log_loss(&ensemble_preds, &test_labels)?,
        auc: auc(&ensemble_preds, &test_labels)?,
        n: test_labels.len(),
        coverage: 1.0,
        wall_time_ms: 0,
    };

    Ok(ExperimentReport {
        seed,
        per_model,
        ensemble,
        weights: registry
            .iter()
            .zip(weights.weights.iter())
            .map(|(spec, &w)| (spec.model_id.clone(), w))
            .collect(),
        warnings,
        n_train,
        n_validation: val_rows.len(),
        n_test: test_rows.len(),
        artifacts: Vec::new(),
    })
}

/// The trained store plus fitted weights, for callers that need to keep the
/// artifacts around (the CLI pipeline does).
pub struct ExperimentArtifacts {
    pub store: ModelStore,
    pub weights: EnsembleWeights,
}

fn training_base_rate(dataset: &Dataset, splits: &[Split]) -> f64 {
    let mut success = 0u64;
    let mut total = 0u64;
    for (x, s) in dataset.interactions.iter().zip(splits) {
        if *s == Split::Train {
            success += x.is_correct as u64;
            total += 1;
        }
    }
    if total == 0 {
        0.5
    } else {
        success as f64 / total as f64
    }
}
