use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parameter layouts differ: {0}")]
    ShapeMismatch(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("classifier training data contains a single class")]
    SingleClass,
    #[error("inconsistent feature lengths: expected {expected}, found {found}")]
    InconsistentFeatures { expected: usize, found: usize },
    #[error("missing parameter segment `{0}`")]
    MissingSegment(String),
    #[error("ground truth missing for query {0}")]
    MissingGroundTruth(usize),
    #[error("update log is empty")]
    EmptyLog,
    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(
        "infeasible label/property correlation {corr} at property rate {rate}: feasible range is [{min:.4}, {max:.4}]"
    )]
    InfeasibleCorrelation { corr: f64, rate: f64, min: f64, max: f64 },
    #[error("adversary data lacks dual labels: {0}")]
    MissingDualLabels(String),
    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// True for errors caused by the configuration rather than the run itself.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_) | Error::InfeasibleCorrelation { .. } | Error::Json(_) => true,
            Error::Module { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

/// Attach the name of the module an error originated from.
pub(crate) trait WithModule<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T> WithModule<T> for Result<T> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Module { .. } => e,
            e => Error::Module { module, source: Box::new(e) },
        })
    }
}
