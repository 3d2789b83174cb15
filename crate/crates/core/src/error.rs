use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate answer_id {0}")]
    DuplicateAnswerId(i64),

    #[error("skill tree is cyclic or disconnected at node {0}")]
    CyclicSkillTree(i64),

    #[error("conflicting parentage for skill {skill}: {first:?} vs {second:?}")]
    SkillParentConflict {
        skill: i64,
        first: Option<i64>,
        second: Option<i64>,
    },

    #[error("interaction {answer_id}: is_correct={is_correct} contradicts options (chosen {chosen:?}, correct {correct:?})")]
    InconsistentCorrectness {
        answer_id: i64,
        is_correct: u8,
        chosen: crate::data::McqOption,
        correct: crate::data::McqOption,
    },

    #[error("invalid split fractions {0:?}: must be positive and sum to 1")]
    BadSplitFractions((f64, f64, f64)),

    #[error("cannot split {0} interactions: need at least 3")]
    TooFewForSplit(usize),

    #[error("schema error: missing mapped column '{0}'")]
    MissingColumn(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{op}: shape mismatch {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("decay factor {0} outside (0, 1)")]
    BadDecay(f64),

    #[error("unknown granularity '{0}'")]
    UnknownGranularity(String),

    #[error("model '{0}' failed: {1}")]
    ModelFailure(String, String),

    #[error("empty training data for '{0}'")]
    EmptyTraining(&'static str),

    #[error("k={k} exceeds reference size {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("prediction width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("bad artifact: {0}")]
    BadArtifact(String),

    #[error("missing upstream artifact '{path}': run the '{stage}' stage first")]
    MissingArtifact { path: String, stage: &'static str },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
