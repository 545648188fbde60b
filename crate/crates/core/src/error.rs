//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset must have n >= 2 rows and p >= 1 columns, got {n} x {p}")]
    InvalidDimensions { n: usize, p: usize },

    #[error("response length {y_len} does not match the {n} design rows")]
    DimensionMismatch { n: usize, y_len: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("column {column} has variance {variance:.3e}, below the 1e-12 floor")]
    ZeroVarianceColumn { column: usize, variance: f64 },

    #[error("column {column} is not standardized: {detail}")]
    NotStandardized { column: usize, detail: String },

    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("lambda grid must be nonempty, nonnegative and strictly decreasing")]
    InvalidGrid,

    #[error("fold count {k} is invalid for {n} observations (need 2 <= k <= n)")]
    InvalidFoldCount { k: usize, n: usize },

    #[error("every lambda grid point failed on some fold")]
    AllFitsFailed,

    #[error("support index {index} is out of range for p = {p}")]
    SupportOutOfRange { index: usize, p: usize },

    #[error("support must be nonempty")]
    EmptySupport,

    #[error("normal-equations system is singular even after the ridge floor")]
    SingularSystem,

    #[error("the C11 block is singular; support columns are linearly dependent")]
    SingularC11,

    #[error("invalid bootstrap config: {0}")]
    InvalidBootstrapConfig(String),

    #[error("quantile requested from an empty sample set")]
    EmptySamples,

    #[error("covariance of kind {kind} is not positive definite for rho = {rho}")]
    NotPositiveDefinite { kind: String, rho: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("X * beta0 is identically zero; cannot calibrate noise from the SNR")]
    ZeroSignal,

    #[error("projection basis is rank deficient")]
    RankDeficient,

    #[error("only {available} columns survive preprocessing, need {needed}")]
    TooFewColumns { needed: usize, available: usize },

    #[error("csv parse error at row {row}, column {col}: {detail}")]
    CsvParse { row: usize, col: usize, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
