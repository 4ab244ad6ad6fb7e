use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} at row {row}, column {column:?}")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid fold request: K = {k}, n = {n}")]
    InvalidFolds { n: usize, k: usize },

    #[error("missing or non-finite prediction for observation {0}")]
    BadPrediction(usize),

    #[error("lasso did not converge at lambda = {lambda:e} after {sweeps} sweeps")]
    LassoNonConvergence { lambda: f64, sweeps: usize },

    #[error("smoothing selection failed: every candidate penalty gave a singular fit")]
    DegenerateGcv,

    #[error("learner failed on fold {fold}, target {target}: {source}")]
    Learner {
        fold: usize,
        target: String,
        #[source]
        source: Box<Error>,
    },

    #[error("singular weighting matrix at beta = {beta} (min pivot {min_pivot:e}, max pivot {max_pivot:e})")]
    SingularWeighting { beta: f64, min_pivot: f64, max_pivot: f64 },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("zero first stage: treatment is orthogonal to the instruments")]
    ZeroFirstStage,

    #[error("objective could not be evaluated anywhere on the search grid")]
    NoFiniteMinimum,

    #[error("inference unavailable: curvature {curvature} is not positive")]
    NonPositiveCurvature { curvature: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("every replication failed for estimator {0}")]
    AllReplicationsFailed(String),
}

impl Error {
    pub(crate) fn learner(fold: usize, target: impl Into<String>, source: Error) -> Self {
        Error::Learner {
            fold,
            target: target.into(),
            source: Box::new(source),
        }
    }

    /// True for failures caused by the numbers rather than by the inputs' shape
    /// or the configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::LassoNonConvergence { .. }
            | Error::DegenerateGcv
            | Error::SingularWeighting { .. }
            | Error::SingularDesign(_)
            | Error::ZeroFirstStage
            | Error::NoFiniteMinimum
            | Error::NonPositiveCurvature { .. }
            | Error::AllReplicationsFailed(_) => true,
            Error::Learner { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
