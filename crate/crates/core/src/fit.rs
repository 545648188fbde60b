//! Shared estimator output types.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Penalty weights for the two-stage estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    /// l1 weight of the selection stage.
    pub lambda1: f64,
    /// l2 weight applied off the selected support in the refit stage.
    pub lambda2: f64,
}

impl PenaltySpec {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if lambda1.is_nan() || lambda1 < 0.0 {
            return Err(Error::InvalidPenalty(format!("lambda1 = {lambda1}")));
        }
        if lambda2.is_nan() || lambda2 < 0.0 {
            return Err(Error::InvalidPenalty(format!("lambda2 = {lambda2}")));
        }
        Ok(PenaltySpec { lambda1, lambda2 })
    }
}

/// Result of a single estimator fit.
///
/// `beta` is reported on the scale of the data originally handed to
/// [`crate::Dataset::standardize`]; for datasets built with
/// [`crate::Dataset::from_standardized`] the two scales coincide.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Coefficients on the original (unstandardized) scale.
    pub beta: DVector<f64>,
    /// Sorted indices selected at the model-selection stage (0-based).
    pub support: Vec<usize>,
    /// Coordinate-descent sweeps performed (0 for direct solves).
    pub iterations: usize,
    pub converged: bool,
    /// Objective value of the standardized problem at the solution.
    pub objective: f64,
    /// Set when a rank-deficiency fallback (minimum-norm solve or ridge
    /// floor) was used.
    pub rank_deficient: bool,
}

/// Validates and normalizes a support set: sorted, unique, within `0..p`.
pub(crate) fn normalize_support(support: &[usize], p: usize) -> Result<Vec<usize>> {
    let mut s: Vec<usize> = support.to_vec();
    s.sort_unstable();
    s.dedup();
    if let Some(&bad) = s.iter().find(|&&j| j >= p) {
        return Err(Error::SupportOutOfRange { index: bad, p });
    }
    Ok(s)
}
