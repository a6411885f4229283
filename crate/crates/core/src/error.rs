use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse `{value}` in column `{column}` (row {row})")]
    ParseValue {
        column: String,
        row: usize,
        value: String,
    },
    #[error("unbalanced panel: unit `{unit}` has no observation for period `{period}`")]
    UnbalancedPanel { unit: String, period: String },
    #[error("duplicate observation for unit `{unit}`, period `{period}`")]
    DuplicateObservation { unit: String, period: String },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("transform needs at least 2 periods, panel has {0}")]
    TooFewPeriods(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("group {} is empty", .0 + 1)]
    EmptyGroup(usize),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("model is not just-identified (m = {m}, d = {d})")]
    NotJustIdentified { m: usize, d: usize },
    #[error("degenerate assignment: a mixing denominator is zero")]
    DegenerateAssignment,
    #[error("clustered standard errors need at least 2 clusters, got {0}")]
    InsufficientClusters(usize),
    #[error("group {} has {size} unit(s); at least 2 are needed", .group + 1)]
    GroupTooSmall { group: usize, size: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("the simulation designs need an even number of units, got {0}")]
    OddN(usize),
}

impl Error {
    /// True for failures of the numerical procedure itself, as opposed to bad
    /// input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign(_)
                | Error::EmptyGroup(_)
                | Error::NoConvergence(_)
                | Error::DegenerateAssignment
                | Error::InsufficientClusters(_)
                | Error::GroupTooSmall { .. }
        )
    }
}
