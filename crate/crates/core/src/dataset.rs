//! Centered and scaled regression data with back-transform metadata.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Variance floor below which a column is rejected as constant.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// A design matrix and response in standardized form.
///
/// Columns of `x` have mean zero and unit sample second moment (divisor `n`),
/// and `y` is centered. The column means, column scales and response mean are
/// retained so coefficients and intervals can be mapped back to the scale of
/// the data originally supplied.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    column_means: DVector<f64>,
    column_scales: DVector<f64>,
    y_mean: f64,
}

fn validate_dims(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    let (n, p) = x.shape();
    if n < 2 || p < 1 {
        return Err(Error::InvalidDimensions { n, p });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { n, y_len: y.len() });
    }
    for j in 0..p {
        for i in 0..n {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFiniteValue { row: i, col: j });
            }
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { row: i, col: p });
    }
    Ok(())
}

impl Dataset {
    /// Centers and scales raw data: each column of `x` gets mean zero and
    /// sample second moment one (divisor `n`), and `y` is centered.
    pub fn standardize(x_raw: &DMatrix<f64>, y_raw: &DVector<f64>) -> Result<Self> {
        validate_dims(x_raw, y_raw)?;
        let (n, p) = x_raw.shape();
        let nf = n as f64;

        let mut x = x_raw.clone();
        let mut means = DVector::zeros(p);
        let mut scales = DVector::zeros(p);
        for j in 0..p {
            let mut col = x.column_mut(j);
            let mean = col.iter().sum::<f64>() / nf;
            col.add_scalar_mut(-mean);
            let variance = col.iter().map(|v| v * v).sum::<f64>() / nf;
            if variance < VARIANCE_FLOOR {
                return Err(Error::ZeroVarianceColumn {
                    column: j,
                    variance,
                });
            }
            let scale = variance.sqrt();
            col /= scale;
            means[j] = mean;
            scales[j] = scale;
        }

        let y_mean = y_raw.iter().sum::<f64>() / nf;
        let y = y_raw.map(|v| v - y_mean);

        Ok(Dataset {
            x,
            y,
            column_means: means,
            column_scales: scales,
            y_mean,
        })
    }

    /// Wraps data that is already standardized (identity metadata).
    ///
    /// Column means must be zero and second moments one within `1e-6`; this
    /// is the entry point for designs constructed to satisfy those conditions
    /// exactly, where re-standardizing would perturb them.
    pub fn from_standardized(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        validate_dims(&x, &y)?;
        let (n, p) = x.shape();
        let nf = n as f64;
        for j in 0..p {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / nf;
            if mean.abs() > 1e-6 {
                return Err(Error::NotStandardized {
                    column: j,
                    detail: format!("mean {mean:.3e} is not zero"),
                });
            }
            let second_moment = col.iter().map(|v| v * v).sum::<f64>() / nf;
            if (second_moment - 1.0).abs() > 1e-6 {
                return Err(Error::NotStandardized {
                    column: j,
                    detail: format!("second moment {second_moment:.6} is not one"),
                });
            }
        }
        let column_means = DVector::zeros(p);
        let column_scales = DVector::from_element(p, 1.0);
        Ok(Dataset {
            x,
            y,
            column_means,
            column_scales,
            y_mean: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Standardized design matrix.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Centered response.
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    pub fn column_scales(&self) -> &DVector<f64> {
        &self.column_scales
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    /// Maps coefficients of the standardized problem to the raw input scale.
    pub fn to_raw_coefficients(&self, beta_std: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(beta_std.len(), |j, _| beta_std[j] / self.column_scales[j])
    }

    /// Maps raw-scale coefficients to the standardized problem scale.
    pub fn to_standardized_coefficients(&self, beta_raw: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(beta_raw.len(), |j, _| beta_raw[j] * self.column_scales[j])
    }

    /// Intercept that completes a raw-scale coefficient vector for prediction.
    pub fn intercept_for(&self, beta_raw: &DVector<f64>) -> f64 {
        self.y_mean - self.column_means.dot(beta_raw)
    }
}
