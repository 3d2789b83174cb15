//! Knowledge-tracing toolkit.
//!
//! Predicts whether a student answers a diagnostic multiple-choice question
//! correctly. The pipeline combines three families of models into a single
//! weighted probabilistic ensemble of 22 members:
//!
//! - 18 tabular classifiers (gradient boosted trees, KNN, Gaussian naive
//!   Bayes, MAP logistic regression) trained on 14 leak-free engineered
//!   features, at four feature granularities plus two full-view models;
//! - 1 masked encoder model that imputes hidden answer tokens in each
//!   student's question/answer sequence;
//! - 3 latent models: skill-profile collaborative filtering, per-quiz 2-PL
//!   item response theory, and 2-PL over clustered quizzes.
//!
//! A synthetic generator with known 2-PL ground truth makes the whole
//! pipeline verifiable at desk scale.

pub mod artifact;
pub mod attention;
pub mod autodiff;
pub mod data;
pub mod ensemble;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod latent;
pub mod math;
pub mod registry;
pub mod store;
pub mod tabular;

mod error;

pub use error::{Error, Result};

pub use data::{Dataset, Interaction, McqOption, QuestionMeta, SkillTree, Split, SplitLabel, StudentMeta};
pub use features::{FeatureTable, FeatureVector, Granularity, NUM_FEATURES};
pub use registry::{default_registry, Algorithm, ModelSpec};
