use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a vector with near-zero norm")]
    ZeroVector,

    #[error("inconsistent scene catalog: {0}")]
    InconsistentCatalog(String),

    #[error("invalid cluster partition: {0}")]
    InvalidPartition(String),

    #[error("scene {0} has no instances")]
    EmptyScene(usize),

    #[error("similarity trade-off must be non-negative, got {0}")]
    NegativeLambda(f64),

    #[error("need at least {need} instances, got {got}")]
    TooFewInstances { got: usize, need: usize },

    #[error("clustering produced no paired clusters; nothing to train on")]
    NoPairedClusters,

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("unpaired bank is empty")]
    EmptyUnpairedBank,

    #[error("id {0} does not refer to a known cluster")]
    UnknownCluster(usize),

    #[error("degenerate box: both sides must be positive")]
    DegenerateBox,

    #[error("ranking contains no relevant item")]
    NoRelevant,

    #[error("cannot pack sightings into scenes: {0}")]
    InfeasiblePacking(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("cannot access {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroVector => "zero_vector",
            Error::InconsistentCatalog(_) => "inconsistent_catalog",
            Error::InvalidPartition(_) => "invalid_partition",
            Error::EmptyScene(_) => "empty_scene",
            Error::NegativeLambda(_) => "negative_lambda",
            Error::TooFewInstances { .. } => "too_few_instances",
            Error::NoPairedClusters => "no_paired_clusters",
            Error::InvalidTemperature(_) => "invalid_temperature",
            Error::EmptyUnpairedBank => "empty_unpaired_bank",
            Error::UnknownCluster(_) => "unknown_cluster",
            Error::DegenerateBox => "degenerate_box",
            Error::NoRelevant => "no_relevant",
            Error::InfeasiblePacking(_) => "infeasible_packing",
            Error::InvalidConfig(_) => "invalid_config",
            Error::File { .. } => "file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Whether the error is the caller's fault (bad input or config).
    /// The CLI maps these to exit code 2, everything else to 1.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::InconsistentCatalog(_)
                | Error::NegativeLambda(_)
                | Error::InvalidTemperature(_)
                | Error::DegenerateBox
                | Error::InfeasiblePacking(_)
                | Error::InvalidConfig(_)
                | Error::File { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
