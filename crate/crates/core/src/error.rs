use thiserror::Error;

/// Errors produced by the inference engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error in {function}: {message}")]
    Domain { function: &'static str, message: String },

    #[error(
        "quadrature did not converge: estimate {value}, achieved error {achieved_error:e} (requested {requested:e})"
    )]
    QuadratureNonConvergence {
        value: f64,
        achieved_error: f64,
        requested: f64,
    },

    #[error("series did not converge within {max_terms} terms")]
    SeriesNonConvergence { max_terms: usize },

    #[error("density grids do not share a common support")]
    SupportMismatch,

    #[error("reference density vanishes where the compared density is positive (at {at})")]
    ZeroReferenceDensity { at: f64 },

    #[error("enumerated outcome space of {size} exceeds the configured bound {bound}")]
    EnumerationOverflow { size: u128, bound: usize },

    #[error("averaged Fisher information is not positive ({value:e}); model irregular or stencil step too large")]
    NegativeInformation { value: f64 },

    #[error("invalid density grid: {0}")]
    InvalidGrid(String),

    #[error("grid is not normalized (integral {integral})")]
    UnnormalizedGrid { integral: f64 },

    #[error("grid too narrow: endpoint density ratio {ratio:e} at sigma = {at}")]
    GridTooNarrow { at: f64, ratio: f64 },

    #[error("point lies outside compact set {level}: {what}")]
    OutsideCompactSet { level: usize, what: String },

    #[error("non-finite weight at sample {index}")]
    NonFiniteWeight { index: usize },

    #[error("log target is not finite at the initial point")]
    ChainInitialization,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),
}

impl Error {
    pub(crate) fn domain(function: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            function,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
