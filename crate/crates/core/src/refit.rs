//! Second-stage refits: least squares on a selected support, the Partial
//! Ridge, and the composed two-stage estimators.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fit::{normalize_support, FitResult};
use crate::lasso::{fit_lasso, LassoOptions};

/// Diagonal bump applied to the on-support block when a Partial Ridge system
/// is not positive definite (duplicated bootstrap rows can do this).
pub const RIDGE_FLOOR: f64 = 1e-10;

/// Above this column count the Partial Ridge system is solved by block
/// elimination instead of a dense p-by-p factorization.
pub const RIDGE_DENSE_LIMIT: usize = 4000;

/// Ratio guard on the Cholesky diagonal; below it the normal equations are
/// treated as rank deficient and the solve falls back to a minimum-norm SVD.
const CHOL_RCOND_FLOOR: f64 = 1e-10;

fn well_conditioned(chol: &Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = chol.l_dirty();
    let s = l.nrows();
    if s == 0 {
        return true;
    }
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for j in 0..s {
        let d = l[(j, j)].abs();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    dmin > CHOL_RCOND_FLOOR * dmax
}

/// Least squares restricted to `support`, on the caller's scale.
///
/// Returns the dense length-`p` coefficient vector (zeros off support) and a
/// flag marking a rank-deficiency fallback. Tries the normal equations by
/// Cholesky first and falls back to a minimum-norm SVD solve on `X_S`.
pub(crate) fn ols_on_support_core(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    gram: Option<&DMatrix<f64>>,
    xty: Option<&[f64]>,
    support: &[usize],
) -> (DVector<f64>, bool) {
    let p = x.ncols();
    let s = support.len();
    let mut beta = DVector::zeros(p);
    if s == 0 {
        return (beta, false);
    }
    let n_inv = 1.0 / x.nrows() as f64;

    let a = DMatrix::from_fn(s, s, |r, c| {
        let (jr, jc) = (support[r], support[c]);
        match gram {
            Some(g) => g[(jr, jc)],
            None => x.column(jr).dot(&x.column(jc)) * n_inv,
        }
    });
    let b = DVector::from_fn(s, |r, _| match xty {
        Some(v) => v[support[r]],
        None => x.column(support[r]).dot(y) * n_inv,
    });

    if let Some(chol) = a.cholesky() {
        if well_conditioned(&chol) {
            let beta_s = chol.solve(&b);
            for (r, &j) in support.iter().enumerate() {
                beta[j] = beta_s[r];
            }
            return (beta, false);
        }
    }

    // minimum-norm solve on the raw columns
    let xs = DMatrix::from_fn(x.nrows(), s, |i, c| x[(i, support[c])]);
    let svd = xs.svd(true, true);
    let eps = f64::EPSILON * x.nrows().max(s) as f64 * svd.singular_values.max();
    let rank = svd.rank(eps);
    let beta_s = svd
        .solve(y, eps)
        .expect("svd solve cannot fail when both factors are computed");
    for (r, &j) in support.iter().enumerate() {
        beta[j] = beta_s[(r, 0)];
    }
    (beta, rank < s)
}

/// Partial Ridge on the caller's scale: minimizes
/// `(1/2n)||y - X b||^2 + (lambda2/2) * sum_{j not in S} b_j^2`,
/// i.e. solves `(X'X/n + lambda2 P) b = X'y/n` with `P` the diagonal
/// projector onto the complement of the support.
pub(crate) fn partial_ridge_core(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    gram: Option<&DMatrix<f64>>,
    xty_in: Option<&[f64]>,
    support_mask: &[bool],
    lambda2: f64,
    dense_limit: usize,
) -> Result<(DVector<f64>, bool)> {
    let (n, p) = x.shape();
    let n_inv = 1.0 / n as f64;
    let xty: DVector<f64> = match xty_in {
        Some(v) => DVector::from_column_slice(v),
        None => DVector::from_fn(p, |j, _| x.column(j).dot(y) * n_inv),
    };

    if p <= dense_limit || lambda2 <= 0.0 {
        let mut m = match gram {
            Some(g) => g.clone(),
            None => {
                let mut g = x.transpose() * x;
                g *= n_inv;
                g
            }
        };
        for j in 0..p {
            if !support_mask[j] {
                m[(j, j)] += lambda2;
            }
        }
        if let Some(chol) = m.clone().cholesky() {
            if well_conditioned(&chol) {
                return Ok((chol.solve(&xty), false));
            }
        }
        for j in 0..p {
            if support_mask[j] {
                m[(j, j)] += RIDGE_FLOOR;
            }
        }
        match m.cholesky() {
            Some(chol) => Ok((chol.solve(&xty), true)),
            None => Err(Error::SingularSystem),
        }
    } else {
        partial_ridge_block(x, &xty, support_mask, lambda2)
    }
}

/// Block-elimination path for wide designs: the penalized complement block is
/// inverted through the matrix-inversion lemma, reducing the work to one
/// n-by-n factorization plus an s-by-s Schur solve.
fn partial_ridge_block(
    x: &DMatrix<f64>,
    xty: &DVector<f64>,
    support_mask: &[bool],
    lambda2: f64,
) -> Result<(DVector<f64>, bool)> {
    let (n, p) = x.shape();
    let n_inv = 1.0 / n as f64;
    let s_idx: Vec<usize> = (0..p).filter(|&j| support_mask[j]).collect();
    let t_idx: Vec<usize> = (0..p).filter(|&j| !support_mask[j]).collect();
    let (s, t) = (s_idx.len(), t_idx.len());

    let xt = DMatrix::from_fn(n, t, |i, c| x[(i, t_idx[c])]);
    // K = lambda2 I_n + X_T X_T' / n
    let mut k = &xt * xt.transpose();
    k *= n_inv;
    for i in 0..n {
        k[(i, i)] += lambda2;
    }
    let chol_k = k.cholesky().ok_or(Error::SingularSystem)?;

    // M_TT^{-1} V = (V - X_T' K^{-1} X_T V / n) / lambda2 for t-row blocks V
    let mtt_inv = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let xv = &xt * v;
        let solved = chol_k.solve(&xv);
        let mut out = v - (xt.transpose() * solved) * n_inv;
        out /= lambda2;
        out
    };

    let g_t = DVector::from_fn(t, |r, _| xty[t_idx[r]]);
    let w_g = mtt_inv(&DMatrix::from_column_slice(t, 1, g_t.as_slice()));

    if s == 0 {
        let mut beta = DVector::zeros(p);
        for (r, &j) in t_idx.iter().enumerate() {
            beta[j] = w_g[(r, 0)];
        }
        return Ok((beta, false));
    }

    let xs = DMatrix::from_fn(n, s, |i, c| x[(i, s_idx[c])]);
    let c_ss = (xs.transpose() * &xs) * n_inv;
    let c_ts = (xt.transpose() * &xs) * n_inv;
    let w_cols = mtt_inv(&c_ts);

    let g_s = DVector::from_fn(s, |r, _| xty[s_idx[r]]);
    let schur = &c_ss - c_ts.transpose() * &w_cols;
    let rhs = &g_s - c_ts.transpose() * w_g.column(0);

    let mut floored = false;
    let beta_s = match schur.clone().cholesky() {
        Some(chol) if well_conditioned(&chol) => chol.solve(&rhs),
        _ => {
            let mut schur2 = schur;
            for r in 0..s {
                schur2[(r, r)] += RIDGE_FLOOR;
            }
            floored = true;
            schur2.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs)
        }
    };

    let beta_t = w_g.column(0) - &w_cols * &beta_s;
    let mut beta = DVector::zeros(p);
    for (r, &j) in s_idx.iter().enumerate() {
        beta[j] = beta_s[r];
    }
    for (r, &j) in t_idx.iter().enumerate() {
        beta[j] = beta_t[r];
    }
    Ok((beta, floored))
}

fn ls_objective(data: &Dataset, beta_std: &DVector<f64>) -> f64 {
    let residual = data.y() - data.x() * beta_std;
    residual.norm_squared() / (2.0 * data.n() as f64)
}

/// Least squares refit on `support`; coefficients off the support are exactly
/// zero. Rank-deficient supports get a minimum-norm solution and the
/// `rank_deficient` flag.
pub fn fit_ols_on_support(data: &Dataset, support: &[usize]) -> Result<FitResult> {
    let support = normalize_support(support, data.p())?;
    let (beta_std, rank_deficient) =
        ols_on_support_core(data.x(), data.y(), None, None, &support);
    let objective = ls_objective(data, &beta_std);
    Ok(FitResult {
        beta: data.to_raw_coefficients(&beta_std),
        support,
        iterations: 0,
        converged: true,
        objective,
        rank_deficient,
    })
}

/// Partial Ridge refit: no penalty on `support`, an l2 penalty of `lambda2`
/// on every other coefficient. The result is generically dense.
pub fn fit_partial_ridge(data: &Dataset, support: &[usize], lambda2: f64) -> Result<FitResult> {
    fit_partial_ridge_with(data, support, lambda2, RIDGE_DENSE_LIMIT)
}

pub(crate) fn fit_partial_ridge_with(
    data: &Dataset,
    support: &[usize],
    lambda2: f64,
    dense_limit: usize,
) -> Result<FitResult> {
    if !lambda2.is_finite() || lambda2 < 0.0 {
        return Err(Error::InvalidPenalty(format!("lambda2 = {lambda2}")));
    }
    let support = normalize_support(support, data.p())?;
    let mut mask = vec![false; data.p()];
    for &j in &support {
        mask[j] = true;
    }
    let (beta_std, floored) =
        partial_ridge_core(data.x(), data.y(), None, None, &mask, lambda2, dense_limit)?;
    let penalty: f64 = (0..data.p())
        .filter(|&j| !mask[j])
        .map(|j| beta_std[j] * beta_std[j])
        .sum();
    let objective = ls_objective(data, &beta_std) + 0.5 * lambda2 * penalty;
    Ok(FitResult {
        beta: data.to_raw_coefficients(&beta_std),
        support,
        iterations: 0,
        converged: true,
        objective,
        rank_deficient: floored,
    })
}

/// Lasso + OLS: the Lasso selects, least squares refits on the selection.
pub fn fit_lasso_ols(data: &Dataset, lambda1: f64) -> Result<FitResult> {
    let lasso = fit_lasso(data, lambda1, None)?;
    let mut refit = fit_ols_on_support(data, &lasso.support)?;
    refit.iterations = lasso.iterations;
    refit.converged = lasso.converged;
    Ok(refit)
}

/// Lasso + Partial Ridge: the Lasso selects the support, the Partial Ridge
/// refits all coefficients. `support` records the Lasso selection, not the
/// (dense) nonzero set of the returned coefficients.
pub fn fit_lpr(data: &Dataset, lambda1: f64, lambda2: f64) -> Result<FitResult> {
    fit_lpr_with(data, lambda1, lambda2, &LassoOptions::default())
}

pub fn fit_lpr_with(
    data: &Dataset,
    lambda1: f64,
    lambda2: f64,
    opts: &LassoOptions,
) -> Result<FitResult> {
    let penalties = crate::fit::PenaltySpec::new(lambda1, lambda2)?;
    let lasso = crate::lasso::fit_lasso_with(data, penalties.lambda1, None, opts)?;
    let mut refit = fit_partial_ridge(data, &lasso.support, lambda2)?;
    refit.iterations = lasso.iterations;
    refit.converged = lasso.converged;
    Ok(refit)
}
