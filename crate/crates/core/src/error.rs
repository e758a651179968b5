use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token id {id} is outside the vocabulary of size {vocab_size}")]
    InvalidTokenId { id: u32, vocab_size: usize },

    #[error("prompt does not fit the {budget}-token budget even without keywords ({needed} tokens)")]
    BudgetInfeasible { needed: usize, budget: usize },

    #[error("segment {0:?} is not in the lexicon")]
    UnknownWord(String),

    #[error("cannot synthesize features for an empty transcription")]
    EmptyTranscription,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("loss mask selects no positions")]
    EmptyMask,

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("dev set is empty")]
    EmptyDevSet,

    #[error("reference corpus has zero length")]
    EmptyReferenceCorpus,

    #[error("no keyword occurrences in the references")]
    NoOccurrences,

    #[error("relative reduction needs a positive baseline, got {0}")]
    ZeroBaseline(f64),

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("training mix needs exactly one Y-like corpus, found {0}")]
    MissingYLikeCorpus(usize),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
