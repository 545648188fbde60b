//! Finite-sample model-selection diagnostics: the block decomposition of
//! `C = X'X / n` and the irrepresentable-condition margin.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fit::normalize_support;

/// The four blocks of `C = X'X / n` in support-first column order.
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    pub c11: DMatrix<f64>,
    pub c12: DMatrix<f64>,
    pub c21: DMatrix<f64>,
    pub c22: DMatrix<f64>,
    pub support: Vec<usize>,
}

/// Splits `C = X'X / n` into the support and complement blocks. Fails with
/// `SingularC11` when the support columns are linearly dependent, since every
/// downstream use inverts `C11`.
pub fn block_decompose(x: &DMatrix<f64>, support: &[usize]) -> Result<BlockDecomposition> {
    let p = x.ncols();
    let support = normalize_support(support, p)?;
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let comp: Vec<usize> = (0..p).filter(|j| !support.contains(j)).collect();
    let n_inv = 1.0 / x.nrows() as f64;

    let block = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
            x.column(rows[r]).dot(&x.column(cols[c])) * n_inv
        })
    };

    let c11 = block(&support, &support);
    if c11.clone().cholesky().is_none() {
        return Err(Error::SingularC11);
    }
    Ok(BlockDecomposition {
        c12: block(&support, &comp),
        c21: block(&comp, &support),
        c22: block(&comp, &comp),
        c11,
        support,
    })
}

/// Irrepresentable-condition margin for a sign pattern on the support:
/// `1 - || C21 C11^{-1} sign_S ||_inf`. The condition holds when the margin
/// is strictly positive.
pub fn irrepresentable_margin(
    decomp: &BlockDecomposition,
    sign_s: &[f64],
) -> Result<(f64, bool)> {
    let s = decomp.support.len();
    if sign_s.len() != s {
        return Err(Error::DimensionMismatch {
            n: s,
            y_len: sign_s.len(),
        });
    }
    let chol = decomp
        .c11
        .clone()
        .cholesky()
        .ok_or(Error::SingularC11)?;
    let w = chol.solve(&DVector::from_column_slice(sign_s));
    let v = &decomp.c21 * w;
    let norm = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let margin = 1.0 - norm;
    Ok((margin, margin > 0.0))
}

/// Splits coefficients into the "large" group, `|b_j| >= factor / sqrt(n)`,
/// and its complement.
pub fn cliff_split(
    beta0: &DVector<f64>,
    n: usize,
    threshold_factor: f64,
) -> (Vec<usize>, Vec<usize>) {
    let threshold = threshold_factor / (n as f64).sqrt();
    let mut large = Vec::new();
    let mut small = Vec::new();
    for j in 0..beta0.len() {
        if beta0[j].abs() >= threshold {
            large.push(j);
        } else {
            small.push(j);
        }
    }
    (large, small)
}

/// The two off-support projection magnitudes,
/// `|| sqrt(n) C11^{-1} C12 b_{S^c} ||_inf` and
/// `|| sqrt(n) (C21 C11^{-1} C12 - C22) b_{S^c} ||_inf`,
/// reported raw with no pass/fail verdict.
pub fn projection_magnitudes(
    decomp: &BlockDecomposition,
    beta_small: &DVector<f64>,
    n: usize,
) -> Result<(f64, f64)> {
    let t = decomp.c12.ncols();
    if beta_small.len() != t {
        return Err(Error::DimensionMismatch {
            n: t,
            y_len: beta_small.len(),
        });
    }
    let sqrt_n = (n as f64).sqrt();
    if t == 0 {
        return Ok((0.0, 0.0));
    }
    let chol = decomp
        .c11
        .clone()
        .cholesky()
        .ok_or(Error::SingularC11)?;
    let c12b = &decomp.c12 * beta_small;
    let first = chol.solve(&c12b);
    let m1 = first.iter().fold(0.0f64, |m, x| m.max(x.abs())) * sqrt_n;
    let second = &decomp.c21 * first - &decomp.c22 * beta_small;
    let m2 = second.iter().fold(0.0f64, |m, x| m.max(x.abs())) * sqrt_n;
    Ok((m1, m2))
}
