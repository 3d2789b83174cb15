//! Weighted probabilistic ensembling of the 22 model probability streams.
//!
//! Weights live on the simplex and are fitted on a validation prediction
//! matrix by exponentiated-gradient descent on the mean log-loss, with
//! per-row renormalization over the models that actually scored the row.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::eval::log_loss;
use crate::features::FeatureTable;
use crate::store::ModelStore;
use crate::{Error, Result};

/// Per-row, per-model probabilities over an evaluation set; `None` marks
/// MISSING entries (the model could not score that row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub answer_ids: Vec<i64>,
    pub model_ids: Vec<String>,
    /// Row-major `n_rows x n_models`.
    pub values: Vec<Option<f64>>,
    /// True where the entry was scored natively (no fallback rung).
    pub native: Vec<bool>,
}

impl PredictionMatrix {
    pub fn n_rows(&self) -> usize {
        self.answer_ids.len()
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn get(&self, row: usize, model: usize) -> Option<f64> {
        self.values[row * self.n_models() + model]
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        let m = self.n_models();
        &self.values[row * m..(row + 1) * m]
    }

    /// Rows the model scored natively, for coverage reporting.
    pub fn native_count(&self, model: usize) -> usize {
        let m = self.n_models();
        (0..self.n_rows()).filter(|r| self.native[r * m + model]).count()
    }

    /// Writes `answer_id,<model ids...>`; MISSING entries stay empty.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "answer_id,{}", self.model_ids.join(","))?;
        for r in 0..self.n_rows() {
            write!(w, "{}", self.answer_ids[r])?;
            for entry in self.row(r) {
                match entry {
                    Some(p) => write!(w, ",{p}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores `rows` under every registry model. A model that failed to train
/// contributes an all-MISSING column; the others are unaffected.
pub fn collect_predictions(
    store: &ModelStore,
    dataset: &Dataset,
    table: &FeatureTable,
    rows: &[usize],
) -> PredictionMatrix {
    let n = rows.len();
    let m = store.specs.len();
    let mut values = vec![None; n * m];
    let mut native = vec![false; n * m];
    let columns: Vec<Option<Vec<Option<crate::store::Scored>>>> = store
        .models
        .iter()
        .map(|slot| {
            slot.as_ref()
                .and_then(|model| model.score_rows(dataset, &store.split, table, rows).ok())
        })
        .collect();
    for (model, column) in columns.into_iter().enumerate() {
        let Some(column) = column else { continue };
        for (r, scored) in column.into_iter().enumerate() {
            if let Some(s) = scored {
                values[r * m + model] = Some(s.probability);
                native[r * m + model] = s.native;
            }
        }
    }
    PredictionMatrix {
        answer_ids: rows.iter().map(|&r| dataset.interactions[r].answer_id).collect(),
        model_ids: store.specs.iter().map(|s| s.model_id.clone()).collect(),
        values,
        native,
    }
}

/// Simplex weights plus the fitting record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub model_ids: Vec<String>,
    pub weights: Vec<f64>,
    /// Validation log-loss after every accepted update (non-increasing).
    pub loss_trace: Vec<f64>,
    /// All-MISSING validation rows excluded from fitting.
    pub rows_skipped: usize,
}

impl EnsembleWeights {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "model_id,weight")?;
        for (id, weight) in self.model_ids.iter().zip(&self.weights) {
            writeln!(w, "{id},{weight}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<EnsembleWeights> {
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let mut model_ids = Vec::new();
        let mut weights = Vec::new();
        for record in reader.records() {
            let record = record?;
            model_ids.push(record.get(0).unwrap_or_default().to_string());
            weights.push(
                record
                    .get(1)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::BadArtifact("bad weight value".into()))?,
            );
        }
        Ok(EnsembleWeights { model_ids, weights, loss_trace: Vec::new(), rows_skipped: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { iterations: 500, learning_rate: 0.5 }
    }
}

/// Mixture probability of one row under weights `w`: available entries are
/// reweighted to sum to one; rows whose available weight is zero fall back
/// to a uniform mixture of the available entries.
fn mix_row(row: &[Option<f64>], weights: &[f64]) -> Option<f64> {
    let mut total_weight = 0.0;
    let mut acc = 0.0;
    let mut available = 0usize;
    let mut uniform_acc = 0.0;
    for (entry, &w) in row.iter().zip(weights) {
        if let Some(p) = entry {
            total_weight += w;
            acc += w * p;
            available += 1;
            uniform_acc += p;
        }
    }
    if available == 0 {
        return None;
    }
    Some(if total_weight > 0.0 {
        acc / total_weight
    } else {
        uniform_acc / available as f64
    })
}

fn mean_log_loss(matrix: &PredictionMatrix, labels: &[u8], weights: &[f64], usable: &[usize]) -> f64 {
    let mut preds = Vec::with_capacity(usable.len());
    let mut ys = Vec::with_capacity(usable.len());
    for &r in usable {
        if let Some(p) = mix_row(matrix.row(r), weights) {
            preds.push(p);
            ys.push(labels[r]);
        }
    }
    log_loss(&preds, &ys).unwrap_or(f64::INFINITY)
}

/// Fits simplex weights by exponentiated gradient from a uniform start.
/// Each step is accepted only if the validation log-loss does not increase,
/// and the result is floored against every one-hot weight vector, so the
/// final loss is within 1e-6 of the best single model by construction.
pub fn fit_weights(matrix: &PredictionMatrix, labels: &[u8], opts: &FitOptions) -> Result<EnsembleWeights> {
    let n = matrix.n_rows();
    let m = matrix.n_models();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "fit_weights",
            shapes: format!("{n} rows vs {} labels", labels.len()),
        });
    }
    let usable: Vec<usize> = (0..n).filter(|&r| matrix.row(r).iter().any(|e| e.is_some())).collect();
    let rows_skipped = n - usable.len();
    if usable.len() < 2 {
        return Err(Error::EmptyTraining("ensemble weight fitting"));
    }
    let classes: std::collections::HashSet<u8> = usable.iter().map(|&r| labels[r]).collect();
    if classes.len() < 2 {
        return Err(Error::EmptyTraining("ensemble weight fitting needs both classes"));
    }

    let mut weights = vec![1.0 / m as f64; m];
    let mut loss = mean_log_loss(matrix, labels, &weights, &usable);
    let mut trace = vec![loss];
    let mut lr = opts.learning_rate;

    for _ in 0..opts.iterations {
        // gradient of the mean log-loss wrt the (unnormalized) weights
        let mut grad = vec![0.0; m];
        for &r in &usable {
            let row = matrix.row(r);
            let Some(p) = mix_row(row, &weights) else { continue };
            let p_clamped = p.clamp(1e-12, 1.0 - 1e-12);
            let dl_dp = if labels[r] == 1 { -1.0 / p_clamped } else { 1.0 / (1.0 - p_clamped) };
            let total_w: f64 = row
                .iter()
                .zip(&weights)
                .filter_map(|(e, &w)| e.map(|_| w))
                .sum();
            if total_w <= 0.0 {
                continue;
            }
            for (k, entry) in row.iter().enumerate() {
                if let Some(pk) = entry {
                    grad[k] += dl_dp * (pk - p) / total_w;
                }
            }
        }
        for g in grad.iter_mut() {
            *g /= usable.len() as f64;
        }

        let mut accepted = false;
        let mut step = lr;
        for _ in 0..40 {
            let mut trial: Vec<f64> = weights.iter().zip(&grad).map(|(w, g)| w * (-step * g).exp()).collect();
            let z: f64 = trial.iter().sum();
            for w in trial.iter_mut() {
                *w /= z;
            }
            let trial_loss = mean_log_loss(matrix, labels, &trial, &usable);
            if trial_loss <= loss {
                weights = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if accepted {
            trace.push(loss);
            lr = (step * 1.2).min(opts.learning_rate * 10.0);
        } else {
            break;
        }
    }

    // floor against the one-hot corners: each is a feasible point
    let mut best_onehot: Option<(usize, f64)> = None;
    for k in 0..m {
        let mut onehot = vec![0.0; m];
        onehot[k] = 1.0;
        let l = mean_log_loss(matrix, labels, &onehot, &usable);
        if best_onehot.map(|(_, bl)| l < bl).unwrap_or(true) {
            best_onehot = Some((k, l));
        }
    }
    if let Some((k, l)) = best_onehot {
        if l < loss - 1e-9 {
            weights = vec![0.0; m];
            weights[k] = 1.0;
            loss = l;
            trace.push(loss);
        }
    }

    Ok(EnsembleWeights {
        model_ids: matrix.model_ids.clone(),
        weights,
        loss_trace: trace,
        rows_skipped,
    })
}

/// Convex mixture of the available entries; all-MISSING rows fall back to
/// the supplied base rate (flagged by the second return).
pub fn predict_ensemble(weights: &EnsembleWeights, row: &[Option<f64>], base_rate: f64) -> (f64, bool) {
    match mix_row(row, &weights.weights) {
        Some(p) => (p, false),
        None => (base_rate, true),
    }
}
