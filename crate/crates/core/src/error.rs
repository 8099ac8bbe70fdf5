use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("line {line}: response column `{column}` is missing (row {row})")]
    MissingResponse { line: u64, row: usize, column: String },

    #[error("line {line}: cannot parse `{value}` in column `{column}` as a number")]
    Parse { line: u64, column: String, value: String },

    #[error("response column `{0}` not found in header")]
    UnknownColumn(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("{0} not full column rank")]
    RankDeficient(String),

    #[error("no complete cases")]
    NoCompleteCases,

    #[error("candidate {id} infeasible: n_s = {n_s} < k_s + 1 = {}", k_s + 1)]
    InfeasibleCandidate { id: usize, n_s: usize, k_s: usize },

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("column {0} has no observed entries")]
    FullyMissingColumn(usize),

    #[error("{0} candidate subsets exceed the cap of 2^20; pass an explicit candidate list")]
    TooManySubsets(u128),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True when the error signals a broken internal invariant rather than
    /// bad user input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Dimension(_))
    }
}
