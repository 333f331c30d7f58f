use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("answer index {index} out of range for {num_answers} answers")]
    AnswerOutOfRange { index: usize, num_answers: usize },
    #[error("support context of length {len} exceeds the context budget {budget}")]
    ContextBudgetExceeded { len: usize, budget: usize },
    #[error("instance `{id}` has a non-finite feature")]
    NonFiniteFeature { id: String },
    #[error("instance `{id}` has dimension {got}, expected {expected}")]
    DimensionMismatch { id: String, got: usize, expected: usize },
    #[error("instance `{id}` carries no feature vector")]
    MissingFeatures { id: String },
    #[error("invalid answer set: {0}")]
    InvalidAnswerSet(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("context size {n} exceeds the {m} available instances")]
    ContextTooLarge { n: usize, m: usize },
    #[error("enumeration of {count} items exceeds the cap of {cap}")]
    EnumerationCapExceeded { count: u128, cap: u128 },
    #[error("labeling has length {got}, expected {expected}")]
    LabelingLength { got: usize, expected: usize },
    #[error("task encoder parameters do not conform: {0}")]
    NonConformalParams(String),
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },
    #[error("support pool has {available} candidates, need {needed}")]
    InsufficientPool { available: usize, needed: usize },
    #[error("answers {0} and {1} share their first token")]
    FirstTokenAmbiguous(usize, usize),
    #[error("answers {0} and {1} have identical token sequences")]
    DuplicateTokenSequence(usize, usize),
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("sampler failed: {0}")]
    Sampler(String),
}
