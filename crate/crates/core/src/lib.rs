//! Bootstrap Lasso + Partial Ridge confidence intervals for high-dimensional
//! sparse linear regression, with a Monte-Carlo harness for coverage studies.
//!
//! The pipeline: standardize the data, pick the l1 penalty by K-fold cross
//! validation on the Lasso+OLS refit, then resample (residuals or pairs) and
//! refit to produce per-coefficient confidence intervals. The Partial Ridge
//! second stage keeps unselected coefficients alive with a small l2 penalty,
//! which is what rescues coverage for small but nonzero effects.

pub mod bootstrap;
pub mod csvio;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod lasso;
pub mod metrics;
pub mod refit;
pub mod rng;
pub mod sim;
pub mod tuning;

#[doc(hidden)]
pub mod testutil;

pub use bootstrap::{
    bootstrap_ci, empirical_quantile, lasso_ols_residuals, paired_bootstrap_ci,
    percentile_intervals_from_draws, residual_bootstrap_ci, residual_intervals_from_draws,
    BootstrapConfig, BootstrapDraws, BootstrapMethod, BootstrapRun, IntervalSet, QuantileMethod,
    SecondStage,
};
pub use dataset::Dataset;
pub use diagnostics::{
    block_decompose, cliff_split, irrepresentable_margin, projection_magnitudes,
    BlockDecomposition,
};
pub use error::{Error, Result};
pub use fit::{FitResult, PenaltySpec};
pub use lasso::{
    default_grid, fit_lasso, kkt_violation, lambda_max, lasso_path, soft_threshold, LassoOptions,
};
pub use metrics::{coverage, summarize, GroupSummary, MetricTable, RunRecord};
pub use refit::{fit_lasso_ols, fit_lpr, fit_ols_on_support, fit_partial_ridge};
pub use sim::{
    calibrate_sigma, covariance_matrix, generate_misspecified, preprocess_external,
    run_scenario, sample_coefficients, sample_design, CoeffSpec, CovarianceKind, DesignSpec,
    GroundTruth, MethodSpec, MisspecSpec, Scenario, SimulationOutput,
};
pub use tuning::{cv_lasso_ols, default_lambda2, make_folds, CvConfig, CvResult};
