use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("empty {0}")]
    EmptyField(&'static str),
    #[error("item {item_id:?}: expected 16 levels, found {found}")]
    WrongArity { item_id: String, found: usize },
    #[error("item {item_id:?}: level {level} in dimension {dimension} is outside 0-5")]
    LevelOutOfRange {
        item_id: String,
        dimension: usize,
        level: i64,
    },
    #[error("score {score} for model {model_id:?}, item {item_id:?} is outside [0, 1]")]
    ScoreOutOfRange {
        model_id: String,
        item_id: String,
        score: f64,
    },
    #[error("duplicate score row for model {model_id:?}, item {item_id:?}")]
    DuplicatePair { model_id: String, item_id: String },
    #[error("incomplete performance matrix: missing model {model_id:?}, item {item_id:?}")]
    MissingPair { model_id: String, item_id: String },
    #[error("unknown model id {0:?}")]
    UnknownModel(String),
    #[error("unknown item id {0:?}")]
    UnknownItem(String),
    #[error("item {0:?} is annotated more than once")]
    DuplicateAnnotation(String),
    #[error("item {0:?} has no annotation")]
    MissingAnnotation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("k = {k} exceeds the number of items n = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("every annotation dimension is constant; the embedding is degenerate")]
    DegenerateEmbedding,
    #[error("feature row of item {0:?} has zero norm")]
    ZeroNormFeature(String),
    #[error("training mask is empty")]
    EmptyTrainMask,
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("logistic fit for dimension {dimension} did not converge")]
    LogisticNonConvergence { dimension: usize },
    #[error("mixture model degenerate after {attempts} attempts")]
    GmmDegenerate { attempts: usize },
    #[error("IRT objective became NaN at sweep {sweep}")]
    IrtNan { sweep: usize },
    #[error("ability fit diverged")]
    AbilityDivergence,
    #[error("release ordering metadata is missing")]
    MissingReleaseOrder,
    #[error("empty source model set")]
    EmptySourceSet,
}
