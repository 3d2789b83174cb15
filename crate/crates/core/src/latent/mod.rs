//! Latent-variable models: skill-profile collaborative filtering, per-quiz
//! 2-PL item response theory, and 2-PL over co-attempt question clusters.

pub mod clustering;
pub mod irt;
pub mod skill_cf;

pub use clustering::{adjusted_rand_index, cluster_questions, ClusterParams, QuestionClustering};
pub use irt::{
    fit_irt_all, fit_irt_clustered, fit_irt_quiz, penalized_ll_and_grad, predict_irt,
    two_pl_data_ll, IrtFallback, IrtFitOptions, IrtModelStore, IrtPriors, QuizIrtModel,
};
pub use skill_cf::{build_skill_matrix, factorize, predict_skill_cf, FactorModel, FactorParams, SkillMatrix};
