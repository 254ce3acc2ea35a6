use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature {feature} value {value} is outside its vocabulary of size {size}")]
    OutOfVocabulary {
        feature: usize,
        value: usize,
        size: usize,
    },

    #[error(
        "no training samples fall on the lowest grid level {level}; coarsen the grid so its first bin contains data"
    )]
    EmptyLowestLevel { level: f64 },

    #[error("budget {budget} is below the minimum achievable spend {min_spend} for constraint {constraint}")]
    Infeasible {
        constraint: usize,
        budget: f64,
        min_spend: f64,
    },

    #[error("could not bracket the dual variable: {0}")]
    BracketFailure(String),

    #[error("no feasible plan found; best lambda {lambda:?}, violation {violation:?}")]
    NoFeasiblePlan { lambda: Vec<f64>, violation: Vec<f64> },

    #[error("user {user}: {source}")]
    User {
        user: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown category {0}")]
    UnknownCategory(usize),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("stale dual solution: {0}")]
    Stale(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn for_user(self, user: usize) -> Self {
        Error::User {
            user,
            source: Box::new(self),
        }
    }
}
