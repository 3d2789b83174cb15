//! Gradient boosted trees on histogram-binned features.
//!
//! Boosted logistic loss: each iteration fits a regression tree to the
//! gradient/hessian statistics of the log-loss, with Newton leaf values
//! `-sum(g) / (sum(h) + l2)`. Splits are chosen greedily over quantile bins,
//! scanning features then bins in fixed order, so training is deterministic
//! for a given input order.

use serde::{Deserialize, Serialize};

use crate::math::{clamp_prob, logit, sigmoid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub n_bins: usize,
    pub l2: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 200,
            max_depth: 6,
            learning_rate: 0.1,
            min_leaf: 20,
            n_bins: 256,
            l2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Branch {
        feature: usize,
        /// Values `<= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub root: usize,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = self.root;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Branch { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn used_features(&self, out: &mut std::collections::BTreeSet<usize>) {
        for node in &self.nodes {
            if let Node::Branch { feature, .. } = node {
                out.insert(*feature);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Log-odds of the training prior.
    pub base_score: f64,
    pub n_features: usize,
    /// Set when training labels held a single class; the model then always
    /// returns the class prior.
    pub degenerate: bool,
    /// Training log-loss after each boosting iteration.
    pub train_log_loss: Vec<f64>,
}

impl GbtModel {
    pub fn used_features(&self) -> std::collections::BTreeSet<usize> {
        let mut out = std::collections::BTreeSet::new();
        for t in &self.trees {
            t.used_features(&mut out);
        }
        out
    }
}

struct Binning {
    /// Increasing cut values per feature; bin i holds values in
    /// (cuts[i-1], cuts[i]], bin cuts.len() holds the tail.
    cuts: Vec<Vec<f64>>,
}

impl Binning {
    fn fit(values: &[f64], n_rows: usize, n_features: usize, n_bins: usize) -> Binning {
        let mut cuts = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut column: Vec<f64> = (0..n_rows).map(|r| values[r * n_features + f]).collect();
            column.sort_by(f64::total_cmp);
            let mut feature_cuts = Vec::new();
            for b in 1..n_bins {
                let idx = (b * n_rows / n_bins).min(n_rows.saturating_sub(1));
                let v = column[idx];
                if feature_cuts.last().map(|&last| v > last).unwrap_or(true) {
                    feature_cuts.push(v);
                }
            }
            // the global maximum never needs a cut above it
            if let (Some(&max), Some(&last)) = (column.last(), feature_cuts.last()) {
                if last >= max && feature_cuts.len() > 1 {
                    feature_cuts.pop();
                }
            }
            cuts.push(feature_cuts);
        }
        Binning { cuts }
    }

    fn bin(&self, feature: usize, value: f64) -> usize {
        self.cuts[feature].partition_point(|&c| c < value)
    }

    fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }
}

#[derive(Clone, Copy, Default)]
struct BinStats {
    g: f64,
    h: f64,
    count: usize,
}

struct TreeBuilder<'a> {
    binned: &'a [u16],
    n_features: usize,
    binning: &'a Binning,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbtParams,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, g: f64, h: f64) -> usize {
        let value = -g / (h + self.params.l2);
        self.nodes.push(Node::Leaf { value });
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: &[u32], depth: usize) -> usize {
        let mut g = 0.0;
        let mut h = 0.0;
        for &r in rows {
            g += self.grad[r as usize];
            h += self.hess[r as usize];
        }
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return self.leaf(g, h);
        }

        let parent_score = g * g / (h + self.params.l2);
        let mut best: Option<(usize, usize, f64)> = None; // (feature, bin, gain)
        for f in 0..self.n_features {
            let n_bins = self.binning.n_bins(f);
            if n_bins < 2 {
                continue;
            }
            let mut hist = vec![BinStats::default(); n_bins];
            for &r in rows {
                let b = self.binned[r as usize * self.n_features + f] as usize;
                let s = &mut hist[b];
                s.g += self.grad[r as usize];
                s.h += self.hess[r as usize];
                s.count += 1;
            }
            let mut left = BinStats::default();
            for t in 0..n_bins - 1 {
                left.g += hist[t].g;
                left.h += hist[t].h;
                left.count += hist[t].count;
                let right_count = rows.len() - left.count;
                if left.count < self.params.min_leaf || right_count < self.params.min_leaf {
                    continue;
                }
                let rg = g - left.g;
                let rh = h - left.h;
                let gain = 0.5
                    * (left.g * left.g / (left.h + self.params.l2)
                        + rg * rg / (rh + self.params.l2)
                        - parent_score);
                if gain > 1e-12 && best.map(|(_, _, bg)| gain > bg).unwrap_or(true) {
                    best = Some((f, t, gain));
                }
            }
        }

        let Some((feature, bin, _)) = best else {
            return self.leaf(g, h);
        };
        let threshold = self.binning.cuts[feature][bin];
        let mut left_rows = Vec::with_capacity(rows.len() / 2);
        let mut right_rows = Vec::with_capacity(rows.len() / 2);
        for &r in rows {
            if (self.binned[r as usize * self.n_features + feature] as usize) <= bin {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }
        let left = self.build(&left_rows, depth + 1);
        let right = self.build(&right_rows, depth + 1);
        self.nodes.push(Node::Branch { feature, threshold, left, right });
        self.nodes.len() - 1
    }
}

/// Trains a boosted-tree classifier. `_seed` is unused (no subsampling) but
/// kept so every trainer has the same shape.
pub fn train_gbt(
    values: &[f64],
    n_features: usize,
    labels: &[u8],
    params: &GbtParams,
    _seed: u64,
) -> Result<GbtModel> {
    let n_rows = labels.len();
    if n_rows == 0 || n_features == 0 {
        return Err(Error::EmptyTraining("gbt"));
    }
    debug_assert_eq!(values.len(), n_rows * n_features);

    let positives = labels.iter().filter(|&&y| y == 1).count();
    let prior = clamp_prob(positives as f64 / n_rows as f64);
    let base_score = logit(prior);
    if positives == 0 || positives == n_rows {
        return Ok(GbtModel {
            trees: Vec::new(),
            learning_rate: params.learning_rate,
            base_score,
            n_features,
            degenerate: true,
            train_log_loss: Vec::new(),
        });
    }

    let binning = Binning::fit(values, n_rows, n_features, params.n_bins.max(2));
    let mut binned = vec![0u16; n_rows * n_features];
    for r in 0..n_rows {
        for f in 0..n_features {
            binned[r * n_features + f] = binning.bin(f, values[r * n_features + f]) as u16;
        }
    }

    let mut scores = vec![base_score; n_rows];
    let mut grad = vec![0.0; n_rows];
    let mut hess = vec![0.0; n_rows];
    let all_rows: Vec<u32> = (0..n_rows as u32).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut train_log_loss = Vec::with_capacity(params.n_trees);

    for _ in 0..params.n_trees {
        for r in 0..n_rows {
            let p = sigmoid(scores[r]);
            grad[r] = p - labels[r] as f64;
            hess[r] = (p * (1.0 - p)).max(1e-16);
        }
        let mut builder = TreeBuilder {
            binned: &binned,
            n_features,
            binning: &binning,
            grad: &grad,
            hess: &hess,
            params,
            nodes: Vec::new(),
        };
        let root = builder.build(&all_rows, 0);
        let tree = Tree { nodes: builder.nodes, root };
        for r in 0..n_rows {
            scores[r] += params.learning_rate * tree.predict(&values[r * n_features..(r + 1) * n_features]);
        }
        let loss: f64 = scores
            .iter()
            .zip(labels)
            .map(|(&s, &y)| {
                let p = sigmoid(s).clamp(1e-12, 1.0 - 1e-12);
                if y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / n_rows as f64;
        train_log_loss.push(loss);
        trees.push(tree);
    }

    Ok(GbtModel {
        trees,
        learning_rate: params.learning_rate,
        base_score,
        n_features,
        degenerate: false,
        train_log_loss,
    })
}

/// Probability of a correct answer for one feature row.
pub fn predict_gbt(model: &GbtModel, row: &[f64]) -> Result<f64> {
    if row.len() != model.n_features {
        return Err(Error::WidthMismatch { expected: model.n_features, got: row.len() });
    }
    let mut score = model.base_score;
    for tree in &model.trees {
        score += model.learning_rate * tree.predict(row);
    }
    Ok(clamp_prob(sigmoid(score)))
}
