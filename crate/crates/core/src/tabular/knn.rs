//! K-nearest-neighbour classifier over standardized features.
//!
//! Exact brute-force semantics: Euclidean distance on standardized retained
//! features, distance ties broken by reference row index, vote probability
//! `(correct_neighbours + 1) / (k + 2)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    /// Reference rows are capped by a seeded uniform subsample at full scale.
    pub max_reference: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 100, max_reference: 200_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    /// Effective neighbourhood size (clamped to the reference size).
    pub k: usize,
    pub n_features_in: usize,
    /// Original feature indices kept after dropping zero-variance columns.
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Per-original-feature standardization parameters.
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Standardized reference rows, width `retained.len()`.
    pub reference: Vec<f64>,
    pub labels: Vec<u8>,
    /// True when the reference set is a subsample of the training data.
    pub subsampled: bool,
}

pub fn train_knn(
    values: &[f64],
    n_features: usize,
    labels: &[u8],
    params: &KnnParams,
    seed: u64,
) -> Result<KnnModel> {
    let n_rows = labels.len();
    if n_rows == 0 || n_features == 0 {
        return Err(Error::EmptyTraining("knn"));
    }

    let mut keep: Vec<usize> = (0..n_rows).collect();
    let subsampled = n_rows > params.max_reference;
    if subsampled {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        keep.shuffle(&mut rng);
        keep.truncate(params.max_reference);
        keep.sort_unstable();
    }

    let mut means = vec![0.0; n_features];
    let mut sds = vec![0.0; n_features];
    for f in 0..n_features {
        let mut sum = 0.0;
        for &r in &keep {
            sum += values[r * n_features + f];
        }
        let mean = sum / keep.len() as f64;
        let mut var = 0.0;
        for &r in &keep {
            let d = values[r * n_features + f] - mean;
            var += d * d;
        }
        means[f] = mean;
        sds[f] = (var / keep.len() as f64).sqrt();
    }
    let retained: Vec<usize> = (0..n_features).filter(|&f| sds[f] > 1e-12).collect();
    let dropped: Vec<usize> = (0..n_features).filter(|&f| sds[f] <= 1e-12).collect();

    let mut reference = Vec::with_capacity(keep.len() * retained.len());
    for &r in &keep {
        for &f in &retained {
            reference.push((values[r * n_features + f] - means[f]) / sds[f]);
        }
    }
    Ok(KnnModel {
        k: params.k.min(keep.len()),
        n_features_in: n_features,
        retained,
        dropped,
        means,
        sds,
        reference,
        labels: keep.iter().map(|&r| labels[r]).collect(),
        subsampled,
    })
}

/// Vote probability among the k nearest reference rows.
pub fn predict_knn(model: &KnnModel, row: &[f64]) -> Result<f64> {
    if row.len() != model.n_features_in {
        return Err(Error::WidthMismatch { expected: model.n_features_in, got: row.len() });
    }
    if model.labels.is_empty() {
        return Err(Error::EmptyTraining("knn reference"));
    }
    let width = model.retained.len();
    let query: Vec<f64> = model
        .retained
        .iter()
        .map(|&f| (row[f] - model.means[f]) / model.sds[f])
        .collect();

    let n = model.labels.len();
    let mut scored: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let start = i * width;
            let mut d2 = 0.0;
            for (a, b) in query.iter().zip(&model.reference[start..start + width]) {
                let d = a - b;
                d2 += d * d;
            }
            (d2, i)
        })
        .collect();

    let k = model.k.min(n);
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        scored.select_nth_unstable_by(k - 1, cmp);
    }
    let correct = scored[..k].iter().filter(|&&(_, i)| model.labels[i] == 1).count();
    Ok((correct as f64 + 1.0) / (k as f64 + 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn global_vote_with_k_equal_n() {
        let n = 40;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        for i in 0..n {
            values.push(rng.random::<f64>());
            values.push(rng.random::<f64>());
            labels.push((i % 2) as u8);
        }
        let model = train_knn(&values, 2, &labels, &KnnParams { k: n, ..KnnParams::default() }, 0).unwrap();
        let p = predict_knn(&model, &[0.5, 0.5]).unwrap();
        assert!((p - (n as f64 / 2.0 + 1.0) / (n as f64 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn self_match_with_k_one() {
        let values = vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let labels = vec![1u8, 0, 1, 0];
        let model = train_knn(&values, 2, &labels, &KnnParams { k: 1, ..KnnParams::default() }, 0).unwrap();
        for (i, &label) in labels.iter().enumerate() {
            let row = [values[i * 2], values[i * 2 + 1]];
            let p = predict_knn(&model, &row).unwrap();
            assert!((p - (label as f64 + 1.0) / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_an_independent_brute_force_oracle() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(12);
        let n = 500;
        let d = 14;
        let values: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        let model = train_knn(&values, d, &labels, &KnnParams { k: 25, ..KnnParams::default() }, 0).unwrap();

        for _ in 0..50 {
            let query: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let fast = predict_knn(&model, &query).unwrap();

            // independent oracle: standardize, full distance list, stable sort
            let z: Vec<f64> = (0..d).map(|f| (query[f] - model.means[f]) / model.sds[f]).collect();
            let mut dists: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let mut acc = 0.0;
                    for f in 0..d {
                        let rz = (values[i * d + f] - model.means[f]) / model.sds[f];
                        acc += (z[f] - rz) * (z[f] - rz);
                    }
                    (acc, i)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let correct = dists[..25].iter().filter(|&&(_, i)| labels[i] == 1).count();
            let slow = (correct as f64 + 1.0) / 27.0;
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn zero_variance_features_are_dropped_and_recorded() {
        let values = vec![
            1.0, 7.0, 0.1, //
            2.0, 7.0, 0.2, //
            3.0, 7.0, 0.3, //
        ];
        let labels = vec![1u8, 0, 1];
        let model = train_knn(&values, 3, &labels, &KnnParams { k: 1, ..KnnParams::default() }, 0).unwrap();
        assert_eq!(model.dropped, vec![1]);
        assert_eq!(model.retained, vec![0, 2]);
        // prediction still takes full-width rows
        assert!(predict_knn(&model, &[1.0, 99.0, 0.1]).is_ok());
        assert!(predict_knn(&model, &[1.0, 0.1]).is_err());
    }

    #[test]
    fn subsampling_is_seeded_and_capped() {
        let n = 300;
        let values: Vec<f64> = (0..n * 2).map(|i| i as f64).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let params = KnnParams { k: 10, max_reference: 64 };
        let a = train_knn(&values, 2, &labels, &params, 5).unwrap();
        let b = train_knn(&values, 2, &labels, &params, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.len(), 64);
        assert!(a.subsampled);
    }
}
