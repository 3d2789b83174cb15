//! Gaussian naive Bayes with floored per-class variances, computed in
//! log space.

use serde::{Deserialize, Serialize};

use crate::math::{clamp_prob, sigmoid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesParams {
    pub variance_floor: f64,
}

impl Default for NaiveBayesParams {
    fn default() -> Self {
        NaiveBayesParams { variance_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    /// P(y = 1); the two class priors sum to one by construction.
    pub prior_positive: f64,
    /// Per-class per-feature Gaussian parameters, index 0 = negative class.
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub n_features: usize,
}

pub fn train_nb(
    values: &[f64],
    n_features: usize,
    labels: &[u8],
    params: &NaiveBayesParams,
) -> Result<NaiveBayesModel> {
    let n_rows = labels.len();
    if n_rows == 0 || n_features == 0 {
        return Err(Error::EmptyTraining("naive_bayes"));
    }
    let mut counts = [0usize; 2];
    let mut sums = [vec![0.0; n_features], vec![0.0; n_features]];
    for (r, &y) in labels.iter().enumerate() {
        let c = y as usize;
        counts[c] += 1;
        for f in 0..n_features {
            sums[c][f] += values[r * n_features + f];
        }
    }
    let mut means = [vec![0.0; n_features], vec![0.0; n_features]];
    let mut variances = [vec![params.variance_floor; n_features], vec![params.variance_floor; n_features]];
    for c in 0..2 {
        if counts[c] == 0 {
            continue;
        }
        for f in 0..n_features {
            means[c][f] = sums[c][f] / counts[c] as f64;
        }
    }
    let mut sq = [vec![0.0; n_features], vec![0.0; n_features]];
    for (r, &y) in labels.iter().enumerate() {
        let c = y as usize;
        for f in 0..n_features {
            let d = values[r * n_features + f] - means[c][f];
            sq[c][f] += d * d;
        }
    }
    for c in 0..2 {
        if counts[c] == 0 {
            continue;
        }
        for f in 0..n_features {
            variances[c][f] = (sq[c][f] / counts[c] as f64).max(params.variance_floor);
        }
    }
    Ok(NaiveBayesModel {
        prior_positive: counts[1] as f64 / n_rows as f64,
        means,
        variances,
        n_features,
    })
}

/// Posterior P(y = 1 | x) under per-feature Gaussian likelihoods.
pub fn predict_nb(model: &NaiveBayesModel, row: &[f64]) -> Result<f64> {
    if row.len() != model.n_features {
        return Err(Error::WidthMismatch { expected: model.n_features, got: row.len() });
    }
    if model.prior_positive <= 0.0 || model.prior_positive >= 1.0 {
        return Ok(clamp_prob(model.prior_positive));
    }
    // log odds = log(prior1/prior0) + sum_f [logN(x; mu1, v1) - logN(x; mu0, v0)]
    let mut log_odds = (model.prior_positive / (1.0 - model.prior_positive)).ln();
    for f in 0..model.n_features {
        let (m0, v0) = (model.means[0][f], model.variances[0][f]);
        let (m1, v1) = (model.means[1][f], model.variances[1][f]);
        let d0 = row[f] - m0;
        let d1 = row[f] - m1;
        log_odds += -0.5 * (v1.ln() + d1 * d1 / v1) + 0.5 * (v0.ln() + d0 * d0 / v0);
    }
    Ok(clamp_prob(sigmoid(log_odds)))
}
