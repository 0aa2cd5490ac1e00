use thiserror::Error;

/// Errors produced by the bandit toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("singular design state: {0}")]
    Singular(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("no termination after {iterations} iterations (guard bound {bound})")]
    NonTermination { iterations: usize, bound: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("action set is empty")]
    EmptyActionSet,

    #[error("{module} failed at round {round}: {source}")]
    Round {
        module: &'static str,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Name of the module an error originates from, for CLI diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Singular(_) => "linalg",
            Error::RankDeficient(_) | Error::NonTermination { .. } => "spanner",
            Error::InvariantViolation(_) => "reweighted",
            Error::Numerical(_) => "policies",
            Error::Config(_) => "cli",
            Error::InvalidInput(_) | Error::EmptyActionSet | Error::Csv(_) => "oracles",
            Error::Round { module, .. } => module,
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
