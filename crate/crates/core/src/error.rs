use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("convex hull is degenerate: {0}")]
    DegenerateHull(String),

    #[error("plot {id} is not fully inside the study region")]
    PlotOutsideRegion { id: String },

    #[error("plots cover the whole study region; nothing left to predict")]
    EmptyUnsampledRegion,

    #[error("k-means needs at least {k} points, got {n}")]
    TooFewPoints { k: usize, n: usize },

    #[error("invalid range parameter: {0}")]
    InvalidRange(String),

    #[error("value {value} outside open interval ({lo}, {hi})")]
    DomainError { value: f64, lo: f64, hi: f64 },

    #[error("non-finite value in {0}")]
    NumericOverflow(&'static str),

    #[error("weighted normal system is singular (condition {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("IWLS did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best_theta: Vec<f64>,
    },

    #[error("all plot counts are zero")]
    NoSignal,

    #[error("model fit failed: {0}")]
    FitFailure(String),

    #[error("not enough residual degrees of freedom (n = {n}, rank = {rank})")]
    InsufficientDof { n: usize, rank: usize },

    #[error("only {kept} plots survive trimming, need at least {needed}")]
    InsufficientDataAfterTrim { kept: usize, needed: usize },

    #[error("SRS estimator requires equal plot areas")]
    UnsupportedForSRS,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable identifier for machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "InvalidGeometry",
            Error::DegenerateHull(_) => "DegenerateHull",
            Error::PlotOutsideRegion { .. } => "PlotOutsideRegion",
            Error::EmptyUnsampledRegion => "EmptyUnsampledRegion",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::InvalidRange(_) => "InvalidRange",
            Error::DomainError { .. } => "DomainError",
            Error::NumericOverflow(_) => "NumericOverflow",
            Error::SingularSystem { .. } => "SingularSystem",
            Error::NotConverged { .. } => "NotConverged",
            Error::NoSignal => "NoSignal",
            Error::FitFailure(_) => "FitFailure",
            Error::InsufficientDof { .. } => "InsufficientDof",
            Error::InsufficientDataAfterTrim { .. } => "InsufficientDataAfterTrim",
            Error::UnsupportedForSRS => "UnsupportedForSRS",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
