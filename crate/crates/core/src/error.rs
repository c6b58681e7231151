use std::path::PathBuf;

use crate::vocab::TokenId;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(TokenId),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("reserved token {0} cannot appear here")]
    ReservedToken(TokenId),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("position already filled")]
    PositionFilled,

    #[error("position {0} is outside the sequence")]
    PositionOutOfRange(usize),

    #[error("empty lattice column")]
    EmptyColumn,

    #[error("off-lattice token {token} at offset {offset}")]
    OffLatticeToken { offset: usize, token: TokenId },

    #[error("enumeration budget exceeded: {paths} paths > {budget}")]
    BudgetExceeded { paths: u128, budget: u128 },

    #[error("draft token has zero drafter probability")]
    ZeroDraftProbability,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty trace set")]
    EmptyTrace,

    #[error("zero cost denominator")]
    ZeroCost,

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}
