//! Lasso by cyclic coordinate descent with covariance-update caching.
//!
//! The solver minimizes `(1/2n) ||y - X b||^2 + lambda1 ||b||_1` and certifies
//! its answer against the subgradient (KKT) conditions before declaring
//! convergence: `|x_j' (y - X b)| / n <= lambda1` for every coordinate, with
//! equality to `lambda1 * sign(b_j)` on the active set.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fit::FitResult;

/// Returns `sign(z) * max(|z| - t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Solver controls.
#[derive(Debug, Clone)]
pub struct LassoOptions {
    /// Sweep stops changing when the max coefficient update falls below
    /// `tol * max(1, ||b||_inf)`.
    pub tol: f64,
    /// Sweep budget.
    pub max_sweeps: usize,
    /// KKT certificate tolerance; enforced internally at a quarter of this.
    pub kkt_tol: f64,
    /// Record the objective after every sweep (used by property tests).
    pub trace_objective: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-7,
            max_sweeps: 100_000,
            kkt_tol: 1e-6,
            trace_objective: false,
        }
    }
}

/// Columns of `(1/n) X'X`, either fully precomputed and shared, or computed
/// on first touch of a coordinate and cached.
pub(crate) enum GramSource<'a> {
    Dense(&'a DMatrix<f64>),
    Lazy {
        x: &'a DMatrix<f64>,
        cols: Vec<Option<Box<[f64]>>>,
    },
}

impl<'a> GramSource<'a> {
    pub(crate) fn lazy(x: &'a DMatrix<f64>) -> Self {
        GramSource::Lazy {
            x,
            cols: vec![None; x.ncols()],
        }
    }

    fn col(&mut self, j: usize) -> &[f64] {
        match self {
            GramSource::Dense(g) => {
                let p = g.nrows();
                &g.as_slice()[j * p..(j + 1) * p]
            }
            GramSource::Lazy { x, cols } => {
                if cols[j].is_none() {
                    let n_inv = 1.0 / x.nrows() as f64;
                    let xj = x.column(j);
                    let col: Vec<f64> = (0..x.ncols())
                        .map(|k| x.column(k).dot(&xj) * n_inv)
                        .collect();
                    cols[j] = Some(col.into_boxed_slice());
                }
                cols[j].as_deref().unwrap()
            }
        }
    }
}

/// Inputs of one coordinate-descent solve, on whatever scale the caller uses.
pub(crate) struct CdProblem<'a> {
    pub gram: GramSource<'a>,
    /// Diagonal of `(1/n) X'X`.
    pub diag: Vec<f64>,
    /// `(1/n) X'y`.
    pub xty: Vec<f64>,
    /// `(1/n) y'y`, for objective evaluation.
    pub y_sq_mean: f64,
}

impl<'a> CdProblem<'a> {
    /// Builds a problem from raw arrays, computing the small summaries.
    pub(crate) fn build(x: &'a DMatrix<f64>, y: &DVector<f64>, gram: Option<&'a DMatrix<f64>>) -> Self {
        let n_inv = 1.0 / x.nrows() as f64;
        let p = x.ncols();
        let diag: Vec<f64> = match gram {
            Some(g) => (0..p).map(|j| g[(j, j)]).collect(),
            None => (0..p).map(|j| x.column(j).norm_squared() * n_inv).collect(),
        };
        let xty: Vec<f64> = (0..p).map(|j| x.column(j).dot(y) * n_inv).collect();
        let y_sq_mean = y.norm_squared() * n_inv;
        let gram = match gram {
            Some(g) => GramSource::Dense(g),
            None => GramSource::lazy(x),
        };
        CdProblem {
            gram,
            diag,
            xty,
            y_sq_mean,
        }
    }
}

pub(crate) struct CdFit {
    /// Coefficients on the problem scale.
    pub beta: DVector<f64>,
    pub support: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    pub objective_trace: Vec<f64>,
}

struct CdState {
    beta: Vec<f64>,
    /// `q_j = (1/n) x_j' (y - X b)`, maintained incrementally.
    q: Vec<f64>,
}

impl CdState {
    fn sweep(
        &mut self,
        problem: &mut CdProblem<'_>,
        lambda1: f64,
        active_only: bool,
    ) -> f64 {
        let p = self.beta.len();
        let mut max_delta = 0.0f64;
        for j in 0..p {
            let old = self.beta[j];
            if active_only && old == 0.0 {
                continue;
            }
            let cjj = problem.diag[j];
            if cjj <= f64::MIN_POSITIVE {
                continue;
            }
            let rho = self.q[j] + cjj * old;
            let new = soft_threshold(rho, lambda1) / cjj;
            let delta = new - old;
            if delta != 0.0 {
                let col = problem.gram.col(j);
                for (qi, gi) in self.q.iter_mut().zip(col.iter()) {
                    *qi -= delta * gi;
                }
                self.beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    /// Recomputes `q` exactly from the cached Gram columns, clearing drift.
    fn refresh_q(&mut self, problem: &mut CdProblem<'_>) {
        self.q.copy_from_slice(&problem.xty);
        for j in 0..self.beta.len() {
            let bj = self.beta[j];
            if bj != 0.0 {
                let col = problem.gram.col(j);
                for (qi, gi) in self.q.iter_mut().zip(col.iter()) {
                    *qi -= bj * gi;
                }
            }
        }
    }

    fn kkt_violation(&self, lambda1: f64) -> f64 {
        let mut worst = 0.0f64;
        for (bj, qj) in self.beta.iter().zip(self.q.iter()) {
            let v = if *bj != 0.0 {
                (qj - lambda1 * bj.signum()).abs()
            } else {
                (qj.abs() - lambda1).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn beta_inf(&self) -> f64 {
        self.beta.iter().fold(0.0f64, |m, b| m.max(b.abs()))
    }

    fn objective(&self, problem: &CdProblem<'_>, lambda1: f64) -> f64 {
        let mut quad = 0.0;
        let mut l1 = 0.0;
        for j in 0..self.beta.len() {
            quad += self.beta[j] * (problem.xty[j] + self.q[j]);
            l1 += self.beta[j].abs();
        }
        0.5 * problem.y_sq_mean - 0.5 * quad + lambda1 * l1
    }
}

/// Core cyclic coordinate descent on a prepared problem.
pub(crate) fn lasso_cd(
    problem: &mut CdProblem<'_>,
    lambda1: f64,
    warm_start: Option<&DVector<f64>>,
    opts: &LassoOptions,
) -> CdFit {
    let p = problem.diag.len();
    let mut state = CdState {
        beta: warm_start
            .map(|w| w.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; p]),
        q: vec![0.0; p],
    };
    state.refresh_q(problem);

    let kkt_enforce = 0.25 * opts.kkt_tol;
    let mut tol = opts.tol;
    let mut sweeps = 0usize;
    let mut converged = false;
    let mut trace = Vec::new();

    while sweeps < opts.max_sweeps {
        let delta = state.sweep(problem, lambda1, false);
        sweeps += 1;
        if opts.trace_objective {
            trace.push(state.objective(problem, lambda1));
        }
        if delta < tol * state.beta_inf().max(1.0) {
            state.refresh_q(problem);
            if state.kkt_violation(lambda1) <= kkt_enforce {
                converged = true;
                break;
            }
            // coefficient changes stalled before the certificate holds;
            // tighten and keep sweeping
            tol *= 0.1;
            continue;
        }
        // iterate the active set before the next full sweep
        while sweeps < opts.max_sweeps {
            let d = state.sweep(problem, lambda1, true);
            sweeps += 1;
            if opts.trace_objective {
                trace.push(state.objective(problem, lambda1));
            }
            if d < tol * state.beta_inf().max(1.0) {
                break;
            }
        }
    }

    state.refresh_q(problem);
    let objective = state.objective(problem, lambda1);
    let support: Vec<usize> = (0..p).filter(|&j| state.beta[j] != 0.0).collect();
    CdFit {
        beta: DVector::from_vec(state.beta),
        support,
        iterations: sweeps,
        converged,
        objective,
        objective_trace: trace,
    }
}

/// The smallest `lambda1` at which the Lasso solution is identically zero:
/// `|| X'y / n ||_inf` on the standardized problem.
pub fn lambda_max(data: &Dataset) -> f64 {
    let n_inv = 1.0 / data.n() as f64;
    (0..data.p())
        .map(|j| (data.x().column(j).dot(data.y()) * n_inv).abs())
        .fold(0.0f64, f64::max)
}

/// Log-spaced grid of `count` points from `lambda_max` down to
/// `1e-3 * lambda_max`.
pub fn default_grid(data: &Dataset, count: usize) -> Vec<f64> {
    let lmax = lambda_max(data);
    if lmax <= 0.0 || count == 0 {
        return vec![0.0];
    }
    if count == 1 {
        return vec![lmax];
    }
    let ratio: f64 = 1e-3;
    (0..count)
        .map(|i| lmax * ratio.powf(i as f64 / (count - 1) as f64))
        .collect()
}

fn validate_lambda(lambda1: f64) -> Result<()> {
    if !lambda1.is_finite() || lambda1 < 0.0 {
        return Err(Error::InvalidPenalty(format!("lambda1 = {lambda1}")));
    }
    Ok(())
}

fn to_fit_result(data: &Dataset, cd: CdFit) -> FitResult {
    FitResult {
        beta: data.to_raw_coefficients(&cd.beta),
        support: cd.support,
        iterations: cd.iterations,
        converged: cd.converged,
        objective: cd.objective,
        rank_deficient: false,
    }
}

/// Fits the Lasso at a single `lambda1`.
///
/// `warm_start` is a raw-scale coefficient vector, typically an earlier fit
/// at a nearby penalty. When the sweep budget is exhausted the best iterate
/// is still returned with `converged = false`.
pub fn fit_lasso(
    data: &Dataset,
    lambda1: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<FitResult> {
    fit_lasso_with(data, lambda1, warm_start, &LassoOptions::default())
}

/// [`fit_lasso`] with explicit solver options.
pub fn fit_lasso_with(
    data: &Dataset,
    lambda1: f64,
    warm_start: Option<&DVector<f64>>,
    opts: &LassoOptions,
) -> Result<FitResult> {
    validate_lambda(lambda1)?;
    let warm_std = warm_start.map(|w| data.to_standardized_coefficients(w));
    let mut problem = CdProblem::build(data.x(), data.y(), None);
    let cd = lasso_cd(&mut problem, lambda1, warm_std.as_ref(), opts);
    Ok(to_fit_result(data, cd))
}

/// Fits the whole path for a strictly decreasing grid, warm-starting each
/// point from the previous one and sharing the Gram cache along the path.
pub fn lasso_path(data: &Dataset, grid: &[f64]) -> Result<Vec<FitResult>> {
    validate_grid(grid)?;
    let opts = LassoOptions::default();
    let mut problem = CdProblem::build(data.x(), data.y(), None);
    let mut fits = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<f64>> = None;
    for &lambda1 in grid {
        let cd = lasso_cd(&mut problem, lambda1, warm.as_ref(), &opts);
        warm = Some(cd.beta.clone());
        fits.push(to_fit_result(data, cd));
    }
    Ok(fits)
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid);
    }
    for w in grid.windows(2) {
        if w[1] >= w[0] || w[1].is_nan() || w[0].is_nan() {
            return Err(Error::InvalidGrid);
        }
    }
    if grid.iter().any(|&l| !l.is_finite() || l < 0.0) {
        return Err(Error::InvalidGrid);
    }
    Ok(())
}

/// Worst KKT residual of a fit, on the standardized problem scale.
///
/// Zero-coordinate violations are `max(|x_j'(y - Xb)|/n - lambda1, 0)`;
/// active coordinates measure `| x_j'(y - Xb)/n - lambda1 sign(b_j) |`.
pub fn kkt_violation(data: &Dataset, fit: &FitResult, lambda1: f64) -> f64 {
    let beta_std = data.to_standardized_coefficients(&fit.beta);
    let residual = data.y() - data.x() * &beta_std;
    let n_inv = 1.0 / data.n() as f64;
    let mut worst = 0.0f64;
    for j in 0..data.p() {
        let qj = data.x().column(j).dot(&residual) * n_inv;
        let v = if beta_std[j] != 0.0 {
            (qj - lambda1 * beta_std[j].signum()).abs()
        } else {
            (qj.abs() - lambda1).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}
