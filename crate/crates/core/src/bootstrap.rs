//! Residual and paired bootstrap engines for per-coefficient confidence
//! intervals.
//!
//! Both engines fix the l1 penalty at the caller's (typically
//! cross-validated) choice, refit every replicate with the configured second
//! stage, and read interval endpoints off empirical quantiles of the
//! replicate coefficients. The residual engine recenters endpoints around
//! the full-data estimates; the paired engine reports raw percentiles.
//! Replicates draw from independent RNG streams keyed by `(seed, b)`, so
//! output is identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::lasso::{lasso_cd, CdProblem, LassoOptions};
use crate::refit::{ols_on_support_core, partial_ridge_core, RIDGE_DENSE_LIMIT};
use crate::rng::stream_rng;

/// Full Gram matrices are precomputed and shared across replicates up to
/// this column count; wider problems fall back to per-replicate lazy
/// caching.
const GRAM_DENSE_LIMIT: usize = 2000;

/// Centered residuals below this magnitude flag a degenerate (noiseless)
/// resampling distribution.
const DEGENERATE_RESIDUAL_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMethod {
    /// Resample centered Lasso+OLS residuals onto the fitted values.
    Residual,
    /// Resample (x_i, y_i) rows with replacement.
    Paired,
}

/// Second-stage estimator refit on every replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondStage {
    /// Partial Ridge on the replicate's Lasso support.
    Lpr,
    /// Least squares on the replicate's Lasso support.
    LassoOls,
    /// The replicate's Lasso fit itself.
    Lasso,
}

/// How empirical quantiles interpolate between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantileMethod {
    /// Linear interpolation at plotting positions `(k-1)/(B-1)`.
    #[default]
    LinearInterpolation,
    /// Pure order statistic: the smallest sample at or above mass `q`.
    OrderStatistic,
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    pub b_replicates: usize,
    /// Miscoverage level; intervals have nominal level `1 - alpha`.
    pub alpha: f64,
    pub method: BootstrapMethod,
    pub estimator: SecondStage,
    /// Selection penalty, held fixed across replicates.
    pub lambda1: f64,
    /// Partial Ridge penalty (`1/n` by default upstream).
    pub lambda2: f64,
    pub seed: u64,
    pub quantile_method: QuantileMethod,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b_replicates < 2 {
            return Err(Error::InvalidBootstrapConfig(format!(
                "b_replicates = {} (need >= 2)",
                self.b_replicates
            )));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 || self.alpha >= 1.0 {
            return Err(Error::InvalidBootstrapConfig(format!(
                "alpha = {} (need 0 < alpha < 1)",
                self.alpha
            )));
        }
        if !self.lambda1.is_finite() || self.lambda1 < 0.0 {
            return Err(Error::InvalidPenalty(format!("lambda1 = {}", self.lambda1)));
        }
        if !self.lambda2.is_finite() || self.lambda2 < 0.0 {
            return Err(Error::InvalidPenalty(format!("lambda2 = {}", self.lambda2)));
        }
        Ok(())
    }
}

/// Replicate coefficient draws, on the original data scale.
#[derive(Debug, Clone)]
pub struct BootstrapDraws {
    /// B-by-p matrix; row b is replicate b's coefficient vector.
    pub draws: DMatrix<f64>,
    /// Lasso support of each replicate.
    pub replicate_supports: Vec<Vec<usize>>,
    /// Replicates that needed a rank-deficiency fallback.
    pub degenerate_count: usize,
}

/// Per-coefficient interval endpoints at level `1 - alpha`.
#[derive(Debug, Clone)]
pub struct IntervalSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub alpha: f64,
    /// Full-data estimate of the configured estimator.
    pub point: DVector<f64>,
}

/// Everything a bootstrap run produces beyond the intervals themselves.
#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub intervals: IntervalSet,
    pub draws: BootstrapDraws,
    /// Full-data Lasso support at the configured `lambda1`.
    pub full_support: Vec<usize>,
    /// All centered residuals were below the degeneracy floor (residual
    /// method only); the intervals collapse to points.
    pub degenerate_residuals: bool,
    /// At least one replicate triggered the rank-deficiency fallback.
    pub rank_collapse: bool,
}

/// Empirical quantile of `samples` at mass `q` in `[0, 1]`.
pub fn empirical_quantile(samples: &[f64], q: f64, method: QuantileMethod) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidBootstrapConfig(format!(
            "quantile level {q} outside [0, 1]"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q, method))
}

fn quantile_sorted(sorted: &[f64], q: f64, method: QuantileMethod) -> f64 {
    let b = sorted.len();
    match method {
        QuantileMethod::LinearInterpolation => {
            if b == 1 {
                return sorted[0];
            }
            let h = q * (b - 1) as f64;
            let lo = h.floor() as usize;
            let hi = lo.min(b - 2) + 1;
            let frac = h - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
        QuantileMethod::OrderStatistic => {
            let k = ((q * b as f64).ceil() as usize).clamp(1, b);
            sorted[k - 1]
        }
    }
}

fn check_draw_dims(draws: &DMatrix<f64>, point: &DVector<f64>, alpha: f64) -> Result<()> {
    if draws.nrows() == 0 {
        return Err(Error::EmptySamples);
    }
    if draws.ncols() != point.len() {
        return Err(Error::DimensionMismatch {
            n: draws.ncols(),
            y_len: point.len(),
        });
    }
    if alpha.is_nan() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::InvalidBootstrapConfig(format!("alpha = {alpha}")));
    }
    Ok(())
}

fn column_quantiles(
    draws: &DMatrix<f64>,
    alpha: f64,
    method: QuantileMethod,
) -> (DVector<f64>, DVector<f64>) {
    let p = draws.ncols();
    let mut lo = DVector::zeros(p);
    let mut hi = DVector::zeros(p);
    let mut buf = vec![0.0; draws.nrows()];
    for j in 0..p {
        for (dst, src) in buf.iter_mut().zip(draws.column(j).iter()) {
            *dst = *src;
        }
        buf.sort_unstable_by(f64::total_cmp);
        lo[j] = quantile_sorted(&buf, alpha / 2.0, method);
        hi[j] = quantile_sorted(&buf, 1.0 - alpha / 2.0, method);
    }
    (lo, hi)
}

/// Residual-bootstrap endpoints from an explicit draws matrix: with `a_j`
/// and `b_j` the `alpha/2` and `1 - alpha/2` quantiles of column `j`, the
/// interval is `[point_j + center_j - b_j, point_j + center_j - a_j]`,
/// `center` being the estimate the resampled responses were built around.
pub fn residual_intervals_from_draws(
    draws: &DMatrix<f64>,
    point: &DVector<f64>,
    center: &DVector<f64>,
    alpha: f64,
    method: QuantileMethod,
) -> Result<IntervalSet> {
    check_draw_dims(draws, point, alpha)?;
    if center.len() != point.len() {
        return Err(Error::DimensionMismatch {
            n: point.len(),
            y_len: center.len(),
        });
    }
    let (a, b) = column_quantiles(draws, alpha, method);
    let shift = point + center;
    Ok(IntervalSet {
        lower: &shift - b,
        upper: &shift - a,
        alpha,
        point: point.clone(),
    })
}

/// Paired-bootstrap (percentile) endpoints from an explicit draws matrix:
/// the raw `alpha/2` and `1 - alpha/2` column quantiles.
pub fn percentile_intervals_from_draws(
    draws: &DMatrix<f64>,
    point: &DVector<f64>,
    alpha: f64,
    method: QuantileMethod,
) -> Result<IntervalSet> {
    check_draw_dims(draws, point, alpha)?;
    let (a, b) = column_quantiles(draws, alpha, method);
    Ok(IntervalSet {
        lower: a,
        upper: b,
        alpha,
        point: point.clone(),
    })
}

/// Full-data fits shared by both engines, on the standardized scale.
struct FullFits {
    gram: Option<DMatrix<f64>>,
    lasso_beta: DVector<f64>,
    lasso_support: Vec<usize>,
    lols_beta: DVector<f64>,
    point_beta: DVector<f64>,
}

fn full_data_fits(data: &Dataset, config: &BootstrapConfig) -> Result<FullFits> {
    let x = data.x();
    let y = data.y();
    let gram = if data.p() <= GRAM_DENSE_LIMIT {
        let mut g = x.transpose() * x;
        g /= data.n() as f64;
        Some(g)
    } else {
        None
    };

    let mut problem = CdProblem::build(x, y, gram.as_ref());
    let xty = problem.xty.clone();
    let opts = LassoOptions::default();
    let lasso = lasso_cd(&mut problem, config.lambda1, None, &opts);

    let (lols_beta, _) = ols_on_support_core(x, y, gram.as_ref(), Some(xty.as_slice()), &lasso.support);
    let point_beta = match config.estimator {
        SecondStage::Lpr => {
            let mut mask = vec![false; data.p()];
            for &j in &lasso.support {
                mask[j] = true;
            }
            partial_ridge_core(
                x,
                y,
                gram.as_ref(),
                Some(xty.as_slice()),
                &mask,
                config.lambda2,
                RIDGE_DENSE_LIMIT,
            )?
            .0
        }
        SecondStage::LassoOls => lols_beta.clone(),
        SecondStage::Lasso => lasso.beta.clone(),
    };

    Ok(FullFits {
        gram,
        lasso_beta: lasso.beta,
        lasso_support: lasso.support,
        lols_beta,
        point_beta,
    })
}

struct ReplicateFit {
    beta_raw: DVector<f64>,
    support: Vec<usize>,
    fallback: bool,
}

/// Fits one replicate: Lasso at the fixed penalty, then the configured
/// second stage, on whatever (x, y) the resampling produced.
fn fit_replicate(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    gram: Option<&DMatrix<f64>>,
    config: &BootstrapConfig,
    warm: &DVector<f64>,
    scales: &DVector<f64>,
    opts: &LassoOptions,
) -> Result<ReplicateFit> {
    let mut problem = CdProblem::build(x, y, gram);
    let xty = problem.xty.clone();
    let lasso = lasso_cd(&mut problem, config.lambda1, Some(warm), opts);

    let (beta_std, fallback) = match config.estimator {
        SecondStage::Lpr => {
            let mut mask = vec![false; x.ncols()];
            for &j in &lasso.support {
                mask[j] = true;
            }
            partial_ridge_core(
                x,
                y,
                gram,
                Some(xty.as_slice()),
                &mask,
                config.lambda2,
                RIDGE_DENSE_LIMIT,
            )?
        }
        SecondStage::LassoOls => {
            ols_on_support_core(x, y, gram, Some(xty.as_slice()), &lasso.support)
        }
        SecondStage::Lasso => (lasso.beta, false),
    };

    let beta_raw = DVector::from_fn(beta_std.len(), |j, _| beta_std[j] / scales[j]);
    Ok(ReplicateFit {
        beta_raw,
        support: lasso.support,
        fallback,
    })
}

fn assemble_draws(
    replicates: Vec<ReplicateFit>,
    p: usize,
) -> (DMatrix<f64>, Vec<Vec<usize>>, usize) {
    let b = replicates.len();
    let mut draws = DMatrix::zeros(b, p);
    let mut supports = Vec::with_capacity(b);
    let mut degenerate = 0usize;
    for (row, rep) in replicates.into_iter().enumerate() {
        draws.row_mut(row).copy_from(&rep.beta_raw.transpose());
        supports.push(rep.support);
        degenerate += usize::from(rep.fallback);
    }
    (draws, supports, degenerate)
}

/// Lasso+OLS residual vector `y - X b` (standardized scale) together with
/// the refit itself. Resampling centers these residuals at their mean.
pub fn lasso_ols_residuals(data: &Dataset, lambda1: f64) -> Result<(DVector<f64>, FitResult)> {
    let fit = crate::refit::fit_lasso_ols(data, lambda1)?;
    let beta_std = data.to_standardized_coefficients(&fit.beta);
    let residuals = data.y() - data.x() * beta_std;
    Ok((residuals, fit))
}

/// Residual bootstrap: centered Lasso+OLS residuals are resampled onto the
/// fitted values, every synthetic response is refit, and the endpoints are
/// the recentered quantiles of the replicate coefficients.
pub fn residual_bootstrap_ci(data: &Dataset, config: &BootstrapConfig) -> Result<BootstrapRun> {
    config.validate()?;
    let fits = full_data_fits(data, config)?;
    let x = data.x();
    let n = data.n();

    let fitted = x * &fits.lols_beta;
    let residuals = data.y() - &fitted;
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let centered = residuals.map(|r| r - mean);
    let degenerate_residuals = centered.amax() < DEGENERATE_RESIDUAL_FLOOR;

    let opts = LassoOptions::default();
    let replicates: Vec<ReplicateFit> = (0..config.b_replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(config.seed, b as u64);
            let y_star = DVector::from_fn(n, |i, _| {
                fitted[i] + centered[rng.random_range(0..n)]
            });
            fit_replicate(
                x,
                &y_star,
                fits.gram.as_ref(),
                config,
                &fits.lasso_beta,
                data.column_scales(),
                &opts,
            )
        })
        .collect::<Result<_>>()?;

    let (draws, supports, degenerate_count) = assemble_draws(replicates, data.p());
    let point_raw = data.to_raw_coefficients(&fits.point_beta);
    let center_raw = data.to_raw_coefficients(&fits.lols_beta);
    let intervals = residual_intervals_from_draws(
        &draws,
        &point_raw,
        &center_raw,
        config.alpha,
        config.quantile_method,
    )?;

    Ok(BootstrapRun {
        intervals,
        draws: BootstrapDraws {
            draws,
            replicate_supports: supports,
            degenerate_count,
        },
        full_support: fits.lasso_support,
        degenerate_residuals,
        rank_collapse: degenerate_count > 0,
    })
}

/// Paired bootstrap: rows are resampled with replacement, every resample is
/// refit, and the endpoints are raw percentile quantiles of the replicate
/// coefficients (no recentering).
pub fn paired_bootstrap_ci(data: &Dataset, config: &BootstrapConfig) -> Result<BootstrapRun> {
    config.validate()?;
    let fits = full_data_fits(data, config)?;
    let x = data.x();
    let y = data.y();
    let n = data.n();
    let p = data.p();

    let opts = LassoOptions::default();
    let replicates: Vec<ReplicateFit> = (0..config.b_replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(config.seed, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let x_star = DMatrix::from_fn(n, p, |i, j| x[(idx[i], j)]);
            let y_star = DVector::from_fn(n, |i, _| y[idx[i]]);
            let gram_star = if p <= GRAM_DENSE_LIMIT {
                let mut g = x_star.transpose() * &x_star;
                g /= n as f64;
                Some(g)
            } else {
                None
            };
            fit_replicate(
                &x_star,
                &y_star,
                gram_star.as_ref(),
                config,
                &fits.lasso_beta,
                data.column_scales(),
                &opts,
            )
        })
        .collect::<Result<_>>()?;

    let (draws, supports, degenerate_count) = assemble_draws(replicates, p);
    let point_raw = data.to_raw_coefficients(&fits.point_beta);
    let intervals = percentile_intervals_from_draws(
        &draws,
        &point_raw,
        config.alpha,
        config.quantile_method,
    )?;

    Ok(BootstrapRun {
        intervals,
        draws: BootstrapDraws {
            draws,
            replicate_supports: supports,
            degenerate_count,
        },
        full_support: fits.lasso_support,
        degenerate_residuals: false,
        rank_collapse: degenerate_count > 0,
    })
}

/// Dispatches on `config.method`.
pub fn bootstrap_ci(data: &Dataset, config: &BootstrapConfig) -> Result<BootstrapRun> {
    match config.method {
        BootstrapMethod::Residual => residual_bootstrap_ci(data, config),
        BootstrapMethod::Paired => paired_bootstrap_ci(data, config),
    }
}
