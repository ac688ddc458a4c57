use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid cluster: {0}")]
    InvalidCluster(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("cluster has no servers")]
    EmptyCluster,

    #[error("edge {from} -> {to} cannot carry a request (block gap or no progress)")]
    InfeasibleEdge { from: String, to: String },

    #[error("placement leaves blocks {0:?} without a hosting server")]
    PlacementInfeasible(Vec<u32>),

    #[error("no feasible routing path for client `{0}`")]
    NoFeasiblePath(String),

    #[error("cache demand {needed} exceeds server capacity {capacity}; never available")]
    NeverAvailable { needed: u64, capacity: u64 },

    #[error("admitting the session would exceed the cache capacity of server `{0}`")]
    CapacityViolated(String),

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("no feasible solution: {0}")]
    Infeasible(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI: 1 for validation problems,
    /// 2 for budget or infeasibility outcomes.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BudgetExceeded(_)
            | Error::Infeasible(_)
            | Error::PlacementInfeasible(_)
            | Error::NoFeasiblePath(_)
            | Error::NeverAvailable { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
