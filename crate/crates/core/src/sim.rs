//! Scenario generators and the Monte-Carlo coverage harness.
//!
//! A `Scenario` freezes the design matrix, the coefficient vector and (in
//! the misspecified case) the quadratic/interaction weights once per seed;
//! only the noise is redrawn across repetitions. Each repetition selects its
//! l1 penalty by cross validation, runs the configured bootstrap methods and
//! contributes one `RunRecord` per method.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_ci, BootstrapConfig, BootstrapMethod, QuantileMethod, SecondStage};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{summarize, MetricTable, RunRecord};
use crate::rng::{derive_stream, std_normal, stream, stream_rng};
use crate::tuning::{cv_lasso_ols, default_lambda2, CvConfig};

/// Covariance structures of the synthetic designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    /// `Sigma_ij = rho^|i-j|`.
    Toeplitz,
    /// `(Sigma^{-1})_ij = rho^|i-j|`; the inverse is built first, then
    /// inverted.
    ExpDecay,
    /// `Sigma_ij = rho` off the diagonal, ones on it.
    EqualCorrelation,
}

impl CovarianceKind {
    fn name(&self) -> &'static str {
        match self {
            CovarianceKind::Toeplitz => "toeplitz",
            CovarianceKind::ExpDecay => "expdecay",
            CovarianceKind::EqualCorrelation => "equal_correlation",
        }
    }
}

/// Builds the p-by-p covariance for a kind and correlation level.
pub fn covariance_matrix(kind: CovarianceKind, rho: f64, p: usize) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::NotPositiveDefinite {
            kind: kind.name().into(),
            rho,
        });
    }
    let toeplitz = |p: usize| {
        DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
    };
    match kind {
        CovarianceKind::Toeplitz => Ok(toeplitz(p)),
        CovarianceKind::ExpDecay => {
            let inv = toeplitz(p);
            let chol = inv.cholesky().ok_or(Error::NotPositiveDefinite {
                kind: kind.name().into(),
                rho,
            })?;
            Ok(chol.inverse())
        }
        CovarianceKind::EqualCorrelation => Ok(DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else {
                rho
            }
        })),
    }
}

/// Design-matrix law of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum DesignSpec {
    NormalToeplitz { rho: f64 },
    NormalExpdecay { rho: f64 },
    NormalEquicorr { rho: f64 },
    T2Toeplitz { rho: f64 },
    ExternalMatrix { path: String },
}

fn default_hard_low() -> f64 {
    1.0 / 3.0
}
fn default_hard_high() -> f64 {
    1.0
}
fn default_weak_mean() -> f64 {
    1.0
}
fn default_weak_var() -> f64 {
    0.001
}
fn default_weak_decay() -> f64 {
    2.0
}

/// Coefficient law of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum CoeffSpec {
    /// `s` entries drawn uniformly from `[low, high]` at random positions,
    /// zero elsewhere.
    Hard {
        s: usize,
        #[serde(default = "default_hard_low")]
        low: f64,
        #[serde(default = "default_hard_high")]
        high: f64,
    },
    /// `s` large entries drawn from `N(mean, var)` at random positions; the
    /// remaining entries decay as `1/(j + 3)^decay`, `j` counting the small
    /// entries in ascending column order.
    Weak {
        s: usize,
        #[serde(default = "default_weak_mean")]
        mean: f64,
        #[serde(default = "default_weak_var")]
        var: f64,
        #[serde(default = "default_weak_decay")]
        decay: f64,
    },
}

impl CoeffSpec {
    pub fn s(&self) -> usize {
        match self {
            CoeffSpec::Hard { s, .. } | CoeffSpec::Weak { s, .. } => *s,
        }
    }
}

fn default_quad_terms() -> usize {
    4
}

/// Optional model misspecification: quadratic and pairwise-interaction
/// terms on the `quad_terms` columns carrying the largest base coefficients
/// are added to the regression mean, and the reported truth becomes the
/// projection of that mean onto the base support.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MisspecSpec {
    #[serde(default = "default_quad_terms")]
    pub quad_terms: usize,
}

/// A full simulation cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub design: DesignSpec,
    pub coeffs: CoeffSpec,
    pub snr: f64,
    pub reps: usize,
    pub b_replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misspec: Option<MisspecSpec>,
}

impl Scenario {
    /// Validates every field, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n < 2 {
            problems.push(format!("n: {} (need >= 2)", self.n));
        }
        if self.p < 1 {
            problems.push(format!("p: {} (need >= 1)", self.p));
        }
        let rho = match &self.design {
            DesignSpec::NormalToeplitz { rho }
            | DesignSpec::NormalExpdecay { rho }
            | DesignSpec::NormalEquicorr { rho }
            | DesignSpec::T2Toeplitz { rho } => Some(*rho),
            DesignSpec::ExternalMatrix { .. } => None,
        };
        if let Some(rho) = rho {
            if !(0.0..1.0).contains(&rho) {
                problems.push(format!("design.rho: {rho} (need 0 <= rho < 1)"));
            }
        }
        if self.coeffs.s() > self.p {
            problems.push(format!(
                "coeffs.s: {} (need s <= p = {})",
                self.coeffs.s(),
                self.p
            ));
        }
        if self.snr.is_nan() || self.snr <= 0.0 {
            problems.push(format!("snr: {} (need > 0)", self.snr));
        }
        if self.reps < 1 {
            problems.push(format!("reps: {} (need >= 1)", self.reps));
        }
        if self.b_replicates < 2 {
            problems.push(format!("b_replicates: {} (need >= 2)", self.b_replicates));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 || self.alpha >= 1.0 {
            problems.push(format!("alpha: {} (need 0 < alpha < 1)", self.alpha));
        }
        if let Some(m) = &self.misspec {
            if m.quad_terms < 1 || m.quad_terms > self.p {
                problems.push(format!(
                    "misspec.quad_terms: {} (need 1 <= quad_terms <= p)",
                    m.quad_terms
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(problems.join("; ")))
        }
    }
}

/// The data-generating truth a run is scored against.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta0: DVector<f64>,
    pub sigma: f64,
    /// Indices of the "large" coefficients (the planted signal).
    pub large_set: Vec<usize>,
}

/// Draws the design matrix of a scenario. Rows are observations.
pub fn sample_design(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let (n, p) = (scenario.n, scenario.p);
    match &scenario.design {
        DesignSpec::NormalToeplitz { rho } => {
            let sigma = covariance_matrix(CovarianceKind::Toeplitz, *rho, p)?;
            Ok(normal_rows(n, &sigma, rng))
        }
        DesignSpec::NormalExpdecay { rho } => {
            let sigma = covariance_matrix(CovarianceKind::ExpDecay, *rho, p)?;
            Ok(normal_rows(n, &sigma, rng))
        }
        DesignSpec::NormalEquicorr { rho } => {
            if !(0.0..1.0).contains(rho) {
                return Err(Error::NotPositiveDefinite {
                    kind: "equal_correlation".into(),
                    rho: *rho,
                });
            }
            // rank-one structure: x = sqrt(1 - rho) z + sqrt(rho) g 1
            let a = (1.0 - rho).sqrt();
            let b = rho.sqrt();
            let mut x = DMatrix::zeros(n, p);
            for i in 0..n {
                let mut row = x.row_mut(i);
                for j in 0..p {
                    row[j] = a * std_normal(rng);
                }
                let g = std_normal(rng);
                for j in 0..p {
                    row[j] += b * g;
                }
            }
            Ok(x)
        }
        DesignSpec::T2Toeplitz { rho } => {
            let sigma = covariance_matrix(CovarianceKind::Toeplitz, *rho, p)?;
            let l = sigma
                .cholesky()
                .ok_or(Error::NotPositiveDefinite {
                    kind: "toeplitz".into(),
                    rho: *rho,
                })?
                .unpack();
            let chi = ChiSquared::new(2.0).expect("2 degrees of freedom is valid");
            let mut x = DMatrix::zeros(n, p);
            let mut z = DVector::zeros(p);
            for i in 0..n {
                z.apply(|v| *v = std_normal(rng));
                let w: f64 = chi.sample(rng);
                let scale = (w / 2.0).sqrt();
                let row = &l * &z;
                for (j, value) in row.iter().enumerate() {
                    x[(i, j)] = value / scale;
                }
            }
            Ok(x)
        }
        DesignSpec::ExternalMatrix { path } => {
            let raw = crate::csvio::read_matrix(path)?;
            subsample_normalized(&raw, n, rng)
        }
    }
}

fn normal_rows(n: usize, sigma: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let p = sigma.ncols();
    let l = sigma
        .clone()
        .cholesky()
        .expect("covariance kinds are positive definite for valid rho")
        .unpack();
    let mut x = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        z.apply(|v| *v = std_normal(rng));
        let row = &l * &z;
        for (j, value) in row.iter().enumerate() {
            x[(i, j)] = *value;
        }
    }
    x
}

/// Subsamples `n` rows without replacement and normalizes each column to
/// zero mean and unit variance (divisor n).
fn subsample_normalized(
    raw: &DMatrix<f64>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let (rows, p) = raw.shape();
    if rows < n {
        return Err(Error::InvalidScenario(format!(
            "external matrix has {rows} rows, scenario needs {n}"
        )));
    }
    let picked = rand::seq::index::sample(rng, rows, n);
    let mut x = DMatrix::from_fn(n, p, |i, j| raw[(picked.index(i), j)]);
    let nf = n as f64;
    for j in 0..p {
        let mut col = x.column_mut(j);
        let mean = col.iter().sum::<f64>() / nf;
        col.add_scalar_mut(-mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / nf;
        if var < crate::dataset::VARIANCE_FLOOR {
            return Err(Error::ZeroVarianceColumn {
                column: j,
                variance: var,
            });
        }
        col /= var.sqrt();
    }
    Ok(x)
}

/// Draws the coefficient vector; returns it with the sorted indices of the
/// large entries.
pub fn sample_coefficients(
    coeffs: &CoeffSpec,
    p: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, Vec<usize>)> {
    let s = coeffs.s();
    if s > p {
        return Err(Error::InvalidScenario(format!("s = {s} exceeds p = {p}")));
    }
    let mut large: Vec<usize> = rand::seq::index::sample(rng, p, s).into_vec();
    large.sort_unstable();
    let mut beta = DVector::zeros(p);
    match coeffs {
        CoeffSpec::Hard { low, high, .. } => {
            for &j in &large {
                beta[j] = rng.random_range(*low..*high);
            }
        }
        CoeffSpec::Weak {
            mean, var, decay, ..
        } => {
            let sd = var.sqrt();
            for &j in &large {
                beta[j] = mean + sd * std_normal(rng);
            }
            let mut small_rank = 0usize;
            for j in 0..p {
                if !large.contains(&j) {
                    small_rank += 1;
                    beta[j] = (small_rank as f64 + 3.0).powf(-decay);
                }
            }
        }
    }
    Ok((beta, large))
}

/// Noise level matching a target signal-to-noise ratio:
/// `sigma = ||X b|| / sqrt(n * snr)`.
pub fn calibrate_sigma(x: &DMatrix<f64>, beta0: &DVector<f64>, snr: f64) -> Result<f64> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::InvalidScenario(format!("snr = {snr}")));
    }
    let signal = (x * beta0).norm();
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(signal / (x.nrows() as f64 * snr).sqrt())
}

/// Quadratic and interaction weights of the misspecified mean, in the order
/// they multiply terms: `quad[k]` goes with `x_{i,c_k}^2`, `interaction[m]`
/// with the pairs `(c_j, c_k)`, `j < k`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct MisspecAlphas {
    pub quad: Vec<f64>,
    pub interaction: Vec<f64>,
}

impl MisspecAlphas {
    pub fn term_count(&self) -> usize {
        self.quad.len() + self.interaction.len()
    }
}

/// Draws the frozen `U(0, 0.1)` weights for `terms` quadratic columns.
pub fn draw_misspec_alphas(terms: usize, rng: &mut ChaCha8Rng) -> MisspecAlphas {
    let quad: Vec<f64> = (0..terms).map(|_| rng.random_range(0.0..0.1)).collect();
    let pairs = terms * terms.saturating_sub(1) / 2;
    let interaction: Vec<f64> = (0..pairs).map(|_| rng.random_range(0.0..0.1)).collect();
    MisspecAlphas { quad, interaction }
}

/// Columns the misspecification terms act on: those carrying the `terms`
/// largest base coefficients in absolute value (ties break to lower index).
fn misspec_columns(beta_base: &DVector<f64>, terms: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..beta_base.len()).collect();
    order.sort_by(|&a, &b| {
        beta_base[b]
            .abs()
            .partial_cmp(&beta_base[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut cols: Vec<usize> = order.into_iter().take(terms).collect();
    cols.sort_unstable();
    cols
}

/// The conditional mean of the misspecified model:
/// `E(y_i | x_i) = x_i' b + sum_k a_k x_{i,c_k}^2 + sum_{j<k} a_{jk} x_{i,c_j} x_{i,c_k}`.
pub fn misspecified_mean(
    x: &DMatrix<f64>,
    beta_base: &DVector<f64>,
    alphas: &MisspecAlphas,
) -> DVector<f64> {
    let terms = alphas.quad.len();
    let cols = misspec_columns(beta_base, terms);
    let mut mean = x * beta_base;
    for i in 0..x.nrows() {
        let mut extra = 0.0;
        for (k, &c) in cols.iter().enumerate() {
            extra += alphas.quad[k] * x[(i, c)] * x[(i, c)];
        }
        let mut m = 0;
        for a in 0..terms {
            for b in (a + 1)..terms {
                extra += alphas.interaction[m] * x[(i, cols[a])] * x[(i, cols[b])];
                m += 1;
            }
        }
        mean[i] += extra;
    }
    mean
}

/// Projection of a mean vector onto the span of the support columns; the
/// pseudo-true coefficients off the support are zero.
fn project_pseudo_truth(
    x: &DMatrix<f64>,
    support: &[usize],
    mean: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = x.ncols();
    let s = support.len();
    let xs = DMatrix::from_fn(x.nrows(), s, |i, c| x[(i, support[c])]);
    let xtx = xs.transpose() * &xs;
    let chol = xtx.cholesky().ok_or(Error::RankDeficient)?;
    let beta_s = chol.solve(&(xs.transpose() * mean));
    let mut beta = DVector::zeros(p);
    for (c, &j) in support.iter().enumerate() {
        beta[j] = beta_s[c];
    }
    Ok(beta)
}

/// One-shot misspecified draw: returns a response with SNR-calibrated noise
/// and the pseudo-true projection the intervals are scored against.
pub fn generate_misspecified(
    x: &DMatrix<f64>,
    beta_base: &DVector<f64>,
    alphas: &MisspecAlphas,
    snr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, GroundTruth)> {
    let n = x.nrows();
    let mean = misspecified_mean(x, beta_base, alphas);
    let mean_sq: f64 = mean.norm_squared();
    if mean_sq == 0.0 {
        return Err(Error::ZeroSignal);
    }
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::InvalidScenario(format!("snr = {snr}")));
    }
    let sigma = (mean_sq / (n as f64 * snr)).sqrt();

    let support: Vec<usize> = (0..beta_base.len())
        .filter(|&j| beta_base[j] != 0.0)
        .collect();
    let beta0 = project_pseudo_truth(x, &support, &mean)?;
    let y = DVector::from_fn(n, |i, _| mean[i] + sigma * std_normal(rng));
    Ok((
        y,
        GroundTruth {
            beta0,
            sigma,
            large_set: support,
        },
    ))
}

/// Drops low-variance columns (variance `<= var_floor`, divisor n), ranks
/// the survivors by absolute Pearson correlation with `y` and keeps the top
/// `top_k` in rank order. Returns the reduced matrix and the map back to
/// original column indices.
pub fn preprocess_external(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    var_floor: f64,
    top_k: usize,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let (n, p) = x_raw.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch { n, y_len: y.len() });
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let y_center = y.map(|v| v - y_mean);
    let y_sd = (y_center.norm_squared() / nf).sqrt();

    let mut ranked: Vec<(usize, f64)> = Vec::new();
    for j in 0..p {
        let col = x_raw.column(j);
        let mean = col.iter().sum::<f64>() / nf;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        if var <= var_floor {
            continue;
        }
        let cov = col
            .iter()
            .zip(y_center.iter())
            .map(|(xv, yv)| (xv - mean) * yv)
            .sum::<f64>()
            / nf;
        let corr = if y_sd > 0.0 {
            (cov / (var.sqrt() * y_sd)).abs()
        } else {
            0.0
        };
        ranked.push((j, corr));
    }
    if ranked.len() < top_k {
        return Err(Error::TooFewColumns {
            needed: top_k,
            available: ranked.len(),
        });
    }
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    let index_map: Vec<usize> = ranked.iter().map(|(j, _)| *j).collect();
    let x = DMatrix::from_fn(n, top_k, |i, c| x_raw[(i, index_map[c])]);
    Ok((x, index_map))
}

/// A bootstrap method/estimator pair as named in the summary tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodSpec {
    pub method: BootstrapMethod,
    pub estimator: SecondStage,
}

impl MethodSpec {
    pub const ALL: [MethodSpec; 6] = [
        MethodSpec {
            method: BootstrapMethod::Residual,
            estimator: SecondStage::Lpr,
        },
        MethodSpec {
            method: BootstrapMethod::Paired,
            estimator: SecondStage::Lpr,
        },
        MethodSpec {
            method: BootstrapMethod::Residual,
            estimator: SecondStage::LassoOls,
        },
        MethodSpec {
            method: BootstrapMethod::Paired,
            estimator: SecondStage::LassoOls,
        },
        MethodSpec {
            method: BootstrapMethod::Residual,
            estimator: SecondStage::Lasso,
        },
        MethodSpec {
            method: BootstrapMethod::Paired,
            estimator: SecondStage::Lasso,
        },
    ];

    pub fn name(&self) -> &'static str {
        match (self.method, self.estimator) {
            (BootstrapMethod::Residual, SecondStage::Lpr) => "rBLPR",
            (BootstrapMethod::Paired, SecondStage::Lpr) => "pBLPR",
            (BootstrapMethod::Residual, SecondStage::LassoOls) => "rBLassoOLS",
            (BootstrapMethod::Paired, SecondStage::LassoOls) => "pBLassoOLS",
            (BootstrapMethod::Residual, SecondStage::Lasso) => "rBLasso",
            (BootstrapMethod::Paired, SecondStage::Lasso) => "pBLasso",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .find(|m| m.name().to_ascii_lowercase() == lower)
            .copied()
            .ok_or_else(|| {
                Error::InvalidScenario(format!(
                    "unknown method {name:?}; expected one of rBLPR, pBLPR, \
                     rBLassoOLS, pBLassoOLS, rBLasso, pBLasso"
                ))
            })
    }
}

/// Harness knobs that are not part of the scenario itself.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Skip per-repetition cross validation and use this l1 penalty.
    pub lambda1_override: Option<f64>,
    /// Replace the default `1/n` Partial Ridge penalty.
    pub lambda2_override: Option<f64>,
    pub k_folds: usize,
    pub grid_points: usize,
    pub quantile_method: QuantileMethod,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            lambda1_override: None,
            lambda2_override: None,
            k_folds: 5,
            grid_points: 100,
            quantile_method: QuantileMethod::LinearInterpolation,
        }
    }
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub scenario: Scenario,
    pub truth: GroundTruth,
    pub per_method: Vec<(MethodSpec, MetricTable)>,
    pub records: Vec<(MethodSpec, Vec<RunRecord>)>,
}

/// The frozen part of a scenario: design, coefficients, noise level and the
/// per-repetition mean vector.
pub(crate) struct FrozenScenario {
    pub x: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub truth: GroundTruth,
}

pub(crate) fn freeze_scenario(scenario: &Scenario) -> Result<FrozenScenario> {
    scenario.validate()?;
    let mut design_rng = stream_rng(scenario.seed, stream::DESIGN);
    let x = sample_design(scenario, &mut design_rng)?;
    let mut coeff_rng = stream_rng(scenario.seed, stream::COEFFS);
    let (beta_base, large_set) = sample_coefficients(&scenario.coeffs, scenario.p, &mut coeff_rng)?;

    match &scenario.misspec {
        None => {
            let sigma = calibrate_sigma(&x, &beta_base, scenario.snr)?;
            let mean = &x * &beta_base;
            Ok(FrozenScenario {
                x,
                mean,
                truth: GroundTruth {
                    beta0: beta_base,
                    sigma,
                    large_set,
                },
            })
        }
        Some(mis) => {
            let mut alpha_rng = stream_rng(scenario.seed, stream::ALPHAS);
            let alphas = draw_misspec_alphas(mis.quad_terms, &mut alpha_rng);
            let mean = misspecified_mean(&x, &beta_base, &alphas);
            let mean_sq = mean.norm_squared();
            if mean_sq == 0.0 {
                return Err(Error::ZeroSignal);
            }
            let sigma = (mean_sq / (scenario.n as f64 * scenario.snr)).sqrt();
            let support: Vec<usize> = (0..beta_base.len())
                .filter(|&j| beta_base[j] != 0.0)
                .collect();
            let beta0 = project_pseudo_truth(&x, &support, &mean)?;
            Ok(FrozenScenario {
                x,
                mean,
                truth: GroundTruth {
                    beta0,
                    sigma,
                    large_set,
                },
            })
        }
    }
}

/// Runs the Monte-Carlo loop: `reps` repetitions, each redrawing only the
/// noise, cross-validating the l1 penalty and running every requested
/// method.
pub fn run_scenario(
    scenario: &Scenario,
    methods: &[MethodSpec],
    opts: &RunOptions,
) -> Result<SimulationOutput> {
    if methods.is_empty() {
        return Err(Error::InvalidScenario("no methods requested".into()));
    }
    let frozen = freeze_scenario(scenario)?;
    let n = scenario.n;
    let lambda2 = opts.lambda2_override.unwrap_or_else(|| default_lambda2(n));

    let per_rep: Vec<Vec<RunRecord>> = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<RunRecord>> {
            let mut noise_rng = stream_rng(scenario.seed, stream::NOISE_BASE + rep as u64);
            let y = DVector::from_fn(n, |i, _| {
                frozen.mean[i] + frozen.truth.sigma * std_normal(&mut noise_rng)
            });
            let ds = Dataset::standardize(&frozen.x, &y)?;

            let lambda1 = match opts.lambda1_override {
                Some(l) => l,
                None => {
                    let cv_cfg = CvConfig {
                        k_folds: opts.k_folds,
                        grid: crate::lasso::default_grid(&ds, opts.grid_points),
                        seed: derive_stream(scenario.seed, stream::CV_BASE + rep as u64),
                    };
                    cv_lasso_ols(&ds, &cv_cfg)?.lambda_optimal
                }
            };

            let mut records = Vec::with_capacity(methods.len());
            for (m_idx, spec) in methods.iter().enumerate() {
                let cfg = BootstrapConfig {
                    b_replicates: scenario.b_replicates,
                    alpha: scenario.alpha,
                    method: spec.method,
                    estimator: spec.estimator,
                    lambda1,
                    lambda2,
                    seed: derive_stream(
                        scenario.seed,
                        stream::BOOT_BASE + (rep as u64) * 16 + m_idx as u64,
                    ),
                    quantile_method: opts.quantile_method,
                };
                let run = bootstrap_ci(&ds, &cfg)?;
                records.push(RunRecord {
                    rep_index: rep,
                    point_estimate: run.intervals.point.clone(),
                    intervals: run.intervals,
                });
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<(MethodSpec, Vec<RunRecord>)> = methods
        .iter()
        .map(|m| (*m, Vec::with_capacity(scenario.reps)))
        .collect();
    for rep_records in per_rep {
        for (m_idx, record) in rep_records.into_iter().enumerate() {
            records[m_idx].1.push(record);
        }
    }

    let mut per_method = Vec::with_capacity(methods.len());
    for (spec, recs) in &records {
        let table = summarize(recs, &frozen.truth, &frozen.truth.large_set)?;
        per_method.push((*spec, table));
    }

    Ok(SimulationOutput {
        scenario: scenario.clone(),
        truth: frozen.truth,
        per_method,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_scenario() -> Scenario {
        Scenario {
            n: 40,
            p: 12,
            design: DesignSpec::NormalToeplitz { rho: 0.5 },
            coeffs: CoeffSpec::Hard {
                s: 3,
                low: 1.0 / 3.0,
                high: 1.0,
            },
            snr: 10.0,
            reps: 2,
            b_replicates: 20,
            alpha: 0.05,
            seed: 7,
            misspec: None,
        }
    }

    #[test]
    fn toeplitz_entries_follow_the_power_law() {
        let sigma = covariance_matrix(CovarianceKind::Toeplitz, 0.5, 3).unwrap();
        assert_relative_eq!(sigma[(0, 2)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(sigma[(0, 1)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(sigma[(1, 1)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rho_zero_gives_identity_for_all_kinds() {
        for kind in [
            CovarianceKind::Toeplitz,
            CovarianceKind::ExpDecay,
            CovarianceKind::EqualCorrelation,
        ] {
            let sigma = covariance_matrix(kind, 0.0, 4).unwrap();
            assert!((sigma - DMatrix::<f64>::identity(4, 4)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn expdecay_inverse_round_trip() {
        let sigma = covariance_matrix(CovarianceKind::ExpDecay, 0.5, 4).unwrap();
        let inv = DMatrix::from_fn(4, 4, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let prod = sigma * inv;
        assert!((prod - DMatrix::<f64>::identity(4, 4)).abs().max() < 1e-10);
    }

    #[test]
    fn invalid_rho_is_rejected() {
        assert!(covariance_matrix(CovarianceKind::Toeplitz, 1.0, 3).is_err());
        assert!(covariance_matrix(CovarianceKind::Toeplitz, -0.1, 3).is_err());
    }

    #[test]
    fn covariance_factorizations_reconstruct() {
        for kind in [
            CovarianceKind::Toeplitz,
            CovarianceKind::ExpDecay,
            CovarianceKind::EqualCorrelation,
        ] {
            for rho in [0.5, 0.9] {
                let sigma = covariance_matrix(kind, rho, 20).unwrap();
                let l = sigma.clone().cholesky().unwrap().unpack();
                let back = &l * l.transpose();
                let err = (&back - &sigma).abs().max() / sigma.abs().max();
                assert!(err < 1e-8, "{kind:?} rho {rho}: {err}");
            }
        }
    }

    #[test]
    fn independent_design_has_small_sample_correlations() {
        let mut sc = base_scenario();
        sc.n = 2000;
        sc.p = 3;
        sc.design = DesignSpec::NormalToeplitz { rho: 0.0 };
        let mut rng = stream_rng(1, 0);
        let x = sample_design(&sc, &mut rng).unwrap();
        for a in 0..3 {
            for b in (a + 1)..3 {
                let r = sample_corr(&x, a, b);
                assert!(r.abs() < 0.08, "corr({a},{b}) = {r}");
            }
        }
    }

    #[test]
    fn toeplitz_adjacent_correlation_matches_rho() {
        let mut sc = base_scenario();
        sc.n = 5000;
        sc.p = 4;
        sc.design = DesignSpec::NormalToeplitz { rho: 0.9 };
        let mut rng = stream_rng(2, 0);
        let x = sample_design(&sc, &mut rng).unwrap();
        for a in 0..3 {
            let r = sample_corr(&x, a, a + 1);
            assert!((r - 0.9).abs() < 0.03, "adjacent corr = {r}");
        }
    }

    #[test]
    fn t2_rows_have_heavy_tails() {
        let mut sc = base_scenario();
        sc.n = 5000;
        sc.p = 2;
        sc.design = DesignSpec::T2Toeplitz { rho: 0.5 };
        let mut rng = stream_rng(3, 0);
        let x = sample_design(&sc, &mut rng).unwrap();
        let max_abs = x.abs().max();
        // a standard normal of this size stays below ~5; t with 2 df does not
        assert!(max_abs > 8.0, "max |x| = {max_abs}");
    }

    fn sample_corr(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
        let n = x.nrows() as f64;
        let ma = x.column(a).iter().sum::<f64>() / n;
        let mb = x.column(b).iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..x.nrows() {
            let da = x[(i, a)] - ma;
            let db = x[(i, b)] - mb;
            num += da * db;
            va += da * da;
            vb += db * db;
        }
        num / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn hard_case_has_the_right_zero_count() {
        let mut rng = stream_rng(4, 0);
        let spec = CoeffSpec::Hard {
            s: 10,
            low: 1.0 / 3.0,
            high: 1.0,
        };
        let (beta, large) = sample_coefficients(&spec, 500, &mut rng).unwrap();
        assert_eq!(beta.iter().filter(|&&b| b == 0.0).count(), 490);
        assert_eq!(large.len(), 10);
        for &j in &large {
            assert!(beta[j] >= 1.0 / 3.0 && beta[j] <= 1.0);
        }
    }

    #[test]
    fn weak_case_smallest_entry_matches_formula() {
        let mut rng = stream_rng(5, 0);
        let spec = CoeffSpec::Weak {
            s: 10,
            mean: 1.0,
            var: 0.001,
            decay: 2.0,
        };
        let (beta, large) = sample_coefficients(&spec, 500, &mut rng).unwrap();
        // the 490th small entry is 1/(490 + 3)^2
        let smalls: Vec<f64> = (0..500)
            .filter(|j| !large.contains(j))
            .map(|j| beta[j])
            .collect();
        assert_eq!(smalls.len(), 490);
        assert_relative_eq!(smalls[489], (493.0f64).powi(-2), epsilon = 1e-15);
        assert_relative_eq!(smalls[0], (4.0f64).powi(-2), epsilon = 1e-15);
    }

    #[test]
    fn weak_case_realizes_a_cliff_at_root_n() {
        // the large group clears 10/sqrt(n) by a wide margin and every small
        // entry sits below 1/sqrt(n), so a factor-1 split recovers the groups
        let mut rng = stream_rng(6, 0);
        let spec = CoeffSpec::Weak {
            s: 10,
            mean: 1.0,
            var: 0.001,
            decay: 2.0,
        };
        let (beta, large) = sample_coefficients(&spec, 500, &mut rng).unwrap();
        let n = 200.0f64;
        for &j in &large {
            assert!(beta[j].abs() > 10.0 / n.sqrt());
        }
        for j in 0..500 {
            if !large.contains(&j) {
                assert!(beta[j].abs() < 1.0 / n.sqrt());
            }
        }
        let (split_large, _) =
            crate::diagnostics::cliff_split(&beta, 200, 1.0);
        assert_eq!(split_large, large);
    }

    #[test]
    fn sigma_calibration_round_trip() {
        let mut rng = stream_rng(7, 0);
        let x = DMatrix::from_fn(50, 5, |_, _| std_normal(&mut rng));
        let beta = DVector::from_column_slice(&[1.0, -0.5, 0.0, 0.0, 2.0]);
        let sigma = calibrate_sigma(&x, &beta, 10.0).unwrap();
        let snr_back = (&x * &beta).norm_squared() / (50.0 * sigma * sigma);
        assert_relative_eq!(snr_back, 10.0, epsilon = 1e-12);
        // quadrupling the snr halves sigma
        let sigma4 = calibrate_sigma(&x, &beta, 40.0).unwrap();
        assert_relative_eq!(sigma4, sigma / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma_arithmetic_example() {
        // ||X b||^2 = 2000, n = 200, snr = 10 -> sigma = 1
        let mut x = DMatrix::zeros(200, 1);
        for i in 0..200 {
            x[(i, 0)] = (2000.0f64 / 200.0).sqrt();
        }
        let beta = DVector::from_column_slice(&[1.0]);
        let sigma = calibrate_sigma(&x, &beta, 10.0).unwrap();
        assert_relative_eq!(sigma, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_signal_is_rejected() {
        let x = DMatrix::zeros(10, 2);
        let beta = DVector::from_column_slice(&[1.0, 1.0]);
        assert!(matches!(
            calibrate_sigma(&x, &beta, 10.0),
            Err(Error::ZeroSignal)
        ));
    }

    #[test]
    fn misspec_alpha_count_is_ten_for_four_terms() {
        let mut rng = stream_rng(8, 0);
        let alphas = draw_misspec_alphas(4, &mut rng);
        assert_eq!(alphas.quad.len(), 4);
        assert_eq!(alphas.interaction.len(), 6);
        assert_eq!(alphas.term_count(), 10);
        for a in alphas.quad.iter().chain(alphas.interaction.iter()) {
            assert!((0.0..0.1).contains(a));
        }
    }

    #[test]
    fn zero_alphas_reduce_to_the_linear_model() {
        let mut rng = stream_rng(9, 0);
        let x = DMatrix::from_fn(40, 6, |_, _| std_normal(&mut rng));
        let mut beta = DVector::zeros(6);
        beta[1] = 1.0;
        beta[4] = -0.8;
        let alphas = MisspecAlphas {
            quad: vec![0.0; 4],
            interaction: vec![0.0; 6],
        };
        let (_, truth) = generate_misspecified(&x, &beta, &alphas, 10.0, &mut rng).unwrap();
        // the pseudo-truth is the projection of X beta onto the support,
        // which is beta itself
        assert!((truth.beta0.clone() - beta).abs().max() < 1e-10);
    }

    #[test]
    fn projection_residual_is_orthogonal_to_support_columns() {
        let mut rng = stream_rng(10, 0);
        let x = DMatrix::from_fn(50, 8, |_, _| std_normal(&mut rng));
        let mut beta = DVector::zeros(8);
        beta[0] = 1.0;
        beta[2] = 0.7;
        beta[5] = -1.2;
        let alphas = draw_misspec_alphas(4, &mut rng);
        let mean = misspecified_mean(&x, &beta, &alphas);
        let support = vec![0, 2, 5];
        let beta0 = project_pseudo_truth(&x, &support, &mean).unwrap();
        let residual = &mean - &x * &beta0;
        for &j in &support {
            let dot = x.column(j).dot(&residual) / 50.0;
            assert!(dot.abs() < 1e-8, "column {j}: {dot}");
        }
    }

    #[test]
    fn preprocess_drops_constants_and_ranks_by_correlation() {
        let mut rng = stream_rng(11, 0);
        let mut x = DMatrix::from_fn(50, 20, |_, _| std_normal(&mut rng));
        for i in 0..50 {
            x[(i, 2)] = 3.0; // constant column
        }
        let y = DVector::from_fn(50, |i, _| x[(i, 7)]);
        let (kept, map) = preprocess_external(&x, &y, 1e-4, 10).unwrap();
        assert_eq!(kept.ncols(), 10);
        assert!(!map.contains(&2), "constant column survived");
        assert_eq!(map[0], 7, "|corr| = 1 column must rank first");

        // ranking matches a brute-force recomputation
        let mut brute: Vec<(usize, f64)> = (0..20)
            .filter(|&j| j != 2)
            .map(|j| {
                let xc = x.column(j);
                let mx = xc.iter().sum::<f64>() / 50.0;
                let my = y.iter().sum::<f64>() / 50.0;
                let mut num = 0.0;
                let mut vx = 0.0;
                let mut vy = 0.0;
                for i in 0..50 {
                    num += (xc[i] - mx) * (y[i] - my);
                    vx += (xc[i] - mx) * (xc[i] - mx);
                    vy += (y[i] - my) * (y[i] - my);
                }
                (j, (num / (vx.sqrt() * vy.sqrt())).abs())
            })
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<usize> = brute.iter().take(10).map(|(j, _)| *j).collect();
        assert_eq!(map, expected);
    }

    #[test]
    fn too_few_surviving_columns_is_an_error() {
        let x = DMatrix::from_fn(20, 3, |i, j| (i * j) as f64);
        let y = DVector::from_fn(20, |i, _| i as f64);
        assert!(matches!(
            preprocess_external(&x, &y, 1e-4, 5),
            Err(Error::TooFewColumns { needed: 5, .. })
        ));
    }

    #[test]
    fn frozen_scenario_is_seed_reproducible() {
        let sc = base_scenario();
        let a = freeze_scenario(&sc).unwrap();
        let b = freeze_scenario(&sc).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.truth.beta0, b.truth.beta0);
        assert_eq!(a.truth.sigma.to_bits(), b.truth.sigma.to_bits());
    }

    #[test]
    fn method_names_round_trip() {
        for spec in MethodSpec::ALL {
            assert_eq!(MethodSpec::parse(spec.name()).unwrap(), spec);
        }
        assert_eq!(
            MethodSpec::parse("rblpr").unwrap().estimator,
            SecondStage::Lpr
        );
        assert!(MethodSpec::parse("nonsense").is_err());
    }

    #[test]
    fn scenario_validation_lists_every_problem() {
        let mut sc = base_scenario();
        sc.snr = -1.0;
        sc.alpha = 2.0;
        sc.coeffs = CoeffSpec::Hard {
            s: 100,
            low: 0.3,
            high: 1.0,
        };
        let err = sc.validate().unwrap_err().to_string();
        assert!(err.contains("snr"));
        assert!(err.contains("alpha"));
        assert!(err.contains("coeffs.s"));
    }

    #[test]
    fn scenario_json_round_trip() {
        let sc = base_scenario();
        let json = serde_json::to_string(&sc).unwrap();
        assert!(json.contains("\"normal_toeplitz\""));
        assert!(json.contains("\"b_replicates\""));
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn tiny_run_reports_containment_indicator_for_single_rep() {
        let mut sc = base_scenario();
        sc.reps = 1;
        sc.b_replicates = 12;
        let methods = [MethodSpec::parse("pBLPR").unwrap()];
        let out = run_scenario(&sc, &methods, &RunOptions::default()).unwrap();
        let table = &out.per_method[0].1;
        for j in 0..sc.p {
            assert!(table.coverage[j] == 0.0 || table.coverage[j] == 1.0);
        }
    }
}
