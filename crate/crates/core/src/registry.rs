//! The model registry: one spec per ensemble member.
//!
//! The default registry enumerates exactly 22 models: 4 algorithms x 4
//! feature granularities (16), two full-view models (gradient boosted trees
//! and KNN), the masked-encoder sequence model, and the three latent models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::features::Granularity;
use crate::math::mix_seed;
use crate::{Error, Result};

/// Algorithm family of a registry entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gbt,
    Knn,
    NaiveBayes,
    BayesGlm,
    AttentionKt,
    SkillCf,
    IrtQuiz,
    IrtClustered,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Gbt => "gbt",
            Algorithm::Knn => "knn",
            Algorithm::NaiveBayes => "naive_bayes",
            Algorithm::BayesGlm => "bayes_glm",
            Algorithm::AttentionKt => "attention_kt",
            Algorithm::SkillCf => "skill_cf",
            Algorithm::IrtQuiz => "irt_quiz",
            Algorithm::IrtClustered => "irt_clustered",
        }
    }

    /// Stable numeric tag used in the binary artifact container.
    pub fn tag(self) -> u8 {
        match self {
            Algorithm::Gbt => 1,
            Algorithm::Knn => 2,
            Algorithm::NaiveBayes => 3,
            Algorithm::BayesGlm => 4,
            Algorithm::AttentionKt => 5,
            Algorithm::SkillCf => 6,
            Algorithm::IrtQuiz => 7,
            Algorithm::IrtClustered => 8,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Algorithm> {
        Some(match tag {
            1 => Algorithm::Gbt,
            2 => Algorithm::Knn,
            3 => Algorithm::NaiveBayes,
            4 => Algorithm::BayesGlm,
            5 => Algorithm::AttentionKt,
            6 => Algorithm::SkillCf,
            7 => Algorithm::IrtQuiz,
            8 => Algorithm::IrtClustered,
            _ => return None,
        })
    }
}

/// Hyperparameter value. Kept as a small sum type so specs serialize
/// deterministically and can be overridden from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl HyperValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            HyperValue::Int(v) => Some(*v as f64),
            HyperValue::Float(v) => Some(*v),
            HyperValue::Text(_) => None,
        }
    }

    pub fn as_usize(&self) -> Option<usize> {
        match self {
            HyperValue::Int(v) if *v >= 0 => Some(*v as usize),
            HyperValue::Float(v) if *v >= 0.0 && v.fract() == 0.0 => Some(*v as usize),
            _ => None,
        }
    }
}

/// Registry entry for one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub algorithm: Algorithm,
    /// Feature view for tabular models; `None` for sequence/latent models.
    pub view: Option<Granularity>,
    pub hyperparameters: BTreeMap<String, HyperValue>,
    pub seed: u64,
}

impl ModelSpec {
    pub fn hyper_f64(&self, key: &str, default: f64) -> f64 {
        self.hyperparameters.get(key).and_then(|v| v.as_f64()).unwrap_or(default)
    }

    pub fn hyper_usize(&self, key: &str, default: usize) -> usize {
        self.hyperparameters.get(key).and_then(|v| v.as_usize()).unwrap_or(default)
    }

    pub fn set(&mut self, key: &str, value: HyperValue) {
        self.hyperparameters.insert(key.to_string(), value);
    }
}

fn tabular_spec(algorithm: Algorithm, view: Granularity, base_seed: u64, index: u64) -> ModelSpec {
    let model_id = format!("{}-{}", algorithm.as_str().replace('_', ""), view.as_str());
    let mut hyperparameters = BTreeMap::new();
    match algorithm {
        Algorithm::Gbt => {
            hyperparameters.insert("n_trees".into(), HyperValue::Int(200));
            hyperparameters.insert("max_depth".into(), HyperValue::Int(6));
            hyperparameters.insert("learning_rate".into(), HyperValue::Float(0.1));
            hyperparameters.insert("min_leaf".into(), HyperValue::Int(20));
            hyperparameters.insert("n_bins".into(), HyperValue::Int(256));
            hyperparameters.insert("l2".into(), HyperValue::Float(1.0));
        }
        Algorithm::Knn => {
            hyperparameters.insert("k".into(), HyperValue::Int(100));
            hyperparameters.insert("max_reference".into(), HyperValue::Int(200_000));
        }
        Algorithm::NaiveBayes => {
            hyperparameters.insert("variance_floor".into(), HyperValue::Float(1e-6));
        }
        Algorithm::BayesGlm => {
            hyperparameters.insert("prior_variance".into(), HyperValue::Float(1.0));
            hyperparameters.insert("tolerance".into(), HyperValue::Float(1e-6));
            hyperparameters.insert("max_iterations".into(), HyperValue::Int(500));
        }
        _ => unreachable!("only tabular algorithms take views"),
    }
    ModelSpec {
        model_id,
        algorithm,
        view: Some(view),
        hyperparameters,
        seed: mix_seed(base_seed, index),
    }
}

/// Builds the canonical 22-model registry. Per-model seeds are derived
/// deterministically from `base_seed`.
pub fn default_registry(base_seed: u64) -> Vec<ModelSpec> {
    let mut specs = Vec::with_capacity(22);
    let views = [Granularity::Question, Granularity::User, Granularity::Group, Granularity::Quiz];
    let algorithms = [Algorithm::Gbt, Algorithm::Knn, Algorithm::NaiveBayes, Algorithm::BayesGlm];
    let mut index = 0u64;
    for algorithm in algorithms {
        for view in views {
            specs.push(tabular_spec(algorithm, view, base_seed, index));
            index += 1;
        }
    }
    for algorithm in [Algorithm::Gbt, Algorithm::Knn] {
        let mut spec = tabular_spec(algorithm, Granularity::Full, base_seed, index);
        spec.model_id = format!("{}-full", algorithm.as_str().replace('_', ""));
        specs.push(spec);
        index += 1;
    }

    let mut attn_params = BTreeMap::new();
    attn_params.insert("d_model".into(), HyperValue::Int(64));
    attn_params.insert("n_heads".into(), HyperValue::Int(4));
    attn_params.insert("n_blocks".into(), HyperValue::Int(2));
    attn_params.insert("d_ff".into(), HyperValue::Int(256));
    attn_params.insert("max_seq_len".into(), HyperValue::Int(64));
    attn_params.insert("mask_prob".into(), HyperValue::Float(0.2));
    attn_params.insert("dropout".into(), HyperValue::Float(0.0));
    attn_params.insert("batch_size".into(), HyperValue::Int(16));
    attn_params.insert("learning_rate".into(), HyperValue::Float(1e-4));
    attn_params.insert("epochs".into(), HyperValue::Int(3));
    specs.push(ModelSpec {
        model_id: "attention-kt".into(),
        algorithm: Algorithm::AttentionKt,
        view: None,
        hyperparameters: attn_params,
        seed: mix_seed(base_seed, index),
    });
    index += 1;

    let mut cf_params = BTreeMap::new();
    cf_params.insert("k".into(), HyperValue::Int(16));
    cf_params.insert("l2".into(), HyperValue::Float(0.1));
    cf_params.insert("iterations".into(), HyperValue::Int(50));
    cf_params.insert("observed_bypass_total".into(), HyperValue::Int(20));
    specs.push(ModelSpec {
        model_id: "skill-cf".into(),
        algorithm: Algorithm::SkillCf,
        view: None,
        hyperparameters: cf_params,
        seed: mix_seed(base_seed, index),
    });
    index += 1;

    let irt_params = || {
        let mut p = BTreeMap::new();
        p.insert("tolerance".into(), HyperValue::Float(1e-5));
        p.insert("max_iterations".into(), HyperValue::Int(200));
        p
    };
    specs.push(ModelSpec {
        model_id: "irt-quiz".into(),
        algorithm: Algorithm::IrtQuiz,
        view: None,
        hyperparameters: irt_params(),
        seed: mix_seed(base_seed, index),
    });
    index += 1;

    let mut clustered = irt_params();
    clustered.insert("min_co_attempts".into(), HyperValue::Int(5));
    specs.push(ModelSpec {
        model_id: "irt-clustered".into(),
        algorithm: Algorithm::IrtClustered,
        view: None,
        hyperparameters: clustered,
        seed: mix_seed(base_seed, index),
    });

    specs
}

/// Looks a spec up by id.
pub fn find_spec<'a>(registry: &'a [ModelSpec], model_id: &str) -> Result<&'a ModelSpec> {
    registry
        .iter()
        .find(|s| s.model_id == model_id)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown model_id '{model_id}'")))
}
