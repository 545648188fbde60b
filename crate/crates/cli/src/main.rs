//! `blpr` — bootstrap confidence intervals for sparse linear models.
//!
//! Subcommands: `ci` fits intervals on user data, `simulate` runs a
//! Monte-Carlo coverage study from a scenario JSON, `cv` cross-validates the
//! l1 penalty, `diagnose` evaluates the irrepresentable-condition margin.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use blpr::rng::{derive_stream, stream};
use blpr::{
    block_decompose, bootstrap_ci, cliff_split, csvio, cv_lasso_ols, default_lambda2,
    irrepresentable_margin, projection_magnitudes, run_scenario, BootstrapConfig,
    BootstrapMethod, CvConfig, Dataset, Error, GroupSummary, MethodSpec, QuantileMethod,
    Scenario, SecondStage,
};

#[derive(Parser)]
#[command(name = "blpr", version, about = "Bootstrap Lasso + Partial Ridge confidence intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Residual,
    Paired,
}

impl From<MethodArg> for BootstrapMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Residual => BootstrapMethod::Residual,
            MethodArg::Paired => BootstrapMethod::Paired,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Lpr,
    LassoOls,
    Lasso,
}

impl From<EstimatorArg> for SecondStage {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Lpr => SecondStage::Lpr,
            EstimatorArg::LassoOls => SecondStage::LassoOls,
            EstimatorArg::Lasso => SecondStage::Lasso,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantileArg {
    Linear,
    OrderStatistic,
}

impl From<QuantileArg> for QuantileMethod {
    fn from(q: QuantileArg) -> Self {
        match q {
            QuantileArg::Linear => QuantileMethod::LinearInterpolation,
            QuantileArg::OrderStatistic => QuantileMethod::OrderStatistic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Confidence intervals for the coefficients of y on X.
    Ci(CiArgs),
    /// Monte-Carlo coverage study from a scenario JSON.
    Simulate(SimulateArgs),
    /// Cross-validate the l1 penalty on the Lasso+OLS refit.
    Cv(CvArgs),
    /// Irrepresentable-condition margin and cliff split of a design.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct CiArgs {
    /// Design matrix CSV (rows = observations, optional header).
    x: PathBuf,
    /// Response CSV (single column or single row).
    y: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "paired")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "lpr")]
    estimator: EstimatorArg,
    /// Miscoverage level (intervals at level 1 - alpha).
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    b: usize,
    /// Fix the l1 penalty instead of cross-validating it.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Partial Ridge penalty (default 1/n).
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long, default_value_t = 5)]
    k_folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "linear")]
    quantile: QuantileArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON path.
    scenario: PathBuf,
    /// Output directory for metrics.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated methods: rBLPR, pBLPR, rBLassoOLS, pBLassoOLS,
    /// rBLasso, pBLasso.
    #[arg(long, default_value = "pBLPR")]
    methods: String,
    /// Skip per-repetition cross validation with a fixed l1 penalty.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Replace the default 1/n Partial Ridge penalty.
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long, default_value_t = 5)]
    k_folds: usize,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CvArgs {
    x: PathBuf,
    y: PathBuf,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    k_folds: usize,
    /// Grid size (log-spaced from lambda_max down three decades).
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    /// Fix a single-point grid at this l1 penalty.
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DiagnoseArgs {
    x: PathBuf,
    /// Coefficient vector CSV; the large/small split and sign pattern come
    /// from it.
    #[arg(long)]
    beta: Option<PathBuf>,
    /// Comma-separated 1-based support indices (alternative to --beta;
    /// signs default to +1).
    #[arg(long)]
    support: Option<String>,
    /// Threshold factor for the cliff split: large when
    /// |beta_j| >= factor / sqrt(n).
    #[arg(long, default_value_t = 1.0)]
    factor: f64,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::SingularSystem
            | Error::SingularC11
            | Error::ZeroSignal
            | Error::RankDeficient
            | Error::AllFitsFailed
            | Error::NotPositiveDefinite { .. } => Failure::Numerical(msg),
            _ => Failure::Validation(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ci(args) => with_threads(args.threads, || cmd_ci(&args)),
        Command::Simulate(args) => with_threads(args.threads, || cmd_simulate(&args)),
        Command::Cv(args) => with_threads(args.threads, || cmd_cv(&args)),
        Command::Diagnose(args) => cmd_diagnose(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn with_threads<T>(threads: Option<usize>, body: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    match threads {
        None => body(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .expect("thread pool construction cannot fail for positive sizes")
            .install(body),
    }
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn load_dataset(x_path: &Path, y_path: &Path) -> Result<Dataset, Failure> {
    let x = csvio::read_matrix(x_path)?;
    let y = csvio::read_vector(y_path)?;
    Ok(Dataset::standardize(&x, &y)?)
}

fn pick_lambda1(
    data: &Dataset,
    fixed: Option<f64>,
    k_folds: usize,
    grid_points: usize,
    seed: u64,
) -> Result<f64, Failure> {
    match fixed {
        Some(l) => Ok(l),
        None => {
            let cfg = CvConfig {
                k_folds,
                grid: blpr::default_grid(data, grid_points),
                seed: derive_stream(seed, stream::CV_BASE),
            };
            Ok(cv_lasso_ols(data, &cfg)?.lambda_optimal)
        }
    }
}

fn cmd_ci(args: &CiArgs) -> Result<(), Failure> {
    let data = load_dataset(&args.x, &args.y)?;
    let lambda1 = pick_lambda1(&data, args.lambda1, args.k_folds, 100, args.seed)?;
    let config = BootstrapConfig {
        b_replicates: args.b,
        alpha: args.alpha,
        method: args.method.into(),
        estimator: args.estimator.into(),
        lambda1,
        lambda2: args.lambda2.unwrap_or_else(|| default_lambda2(data.n())),
        seed: derive_stream(args.seed, stream::BOOT_BASE),
        quantile_method: args.quantile.into(),
    };
    let run = bootstrap_ci(&data, &config)?;

    let mut out = create_file(&args.out)?;
    writeln!(out, "index,point,lower,upper,selected_by_lasso")?;
    for j in 0..data.p() {
        writeln!(
            out,
            "{},{},{},{},{}",
            j + 1,
            run.intervals.point[j],
            run.intervals.lower[j],
            run.intervals.upper[j],
            u8::from(run.full_support.contains(&j))
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MethodSummaryJson {
    method: String,
    large: Option<GroupSummary>,
    small: Option<GroupSummary>,
}

#[derive(Serialize)]
struct SimulationSummaryJson {
    scenario: Scenario,
    sigma: f64,
    /// 1-based indices of the planted large coefficients.
    large_set: Vec<usize>,
    methods: Vec<MethodSummaryJson>,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.scenario)?;
    let mut scenario: Scenario = serde_json::from_str(&text)
        .map_err(|e| Failure::Validation(format!("invalid scenario JSON: {e}")))?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let methods = args
        .methods
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(MethodSpec::parse)
        .collect::<Result<Vec<_>, _>>()?;

    let opts = blpr::sim::RunOptions {
        lambda1_override: args.lambda1,
        lambda2_override: args.lambda2,
        k_folds: args.k_folds,
        ..Default::default()
    };
    let output = run_scenario(&scenario, &methods, &opts)?;

    std::fs::create_dir_all(&args.out)?;
    let mut metrics = create_file(&args.out.join("metrics.csv"))?;
    for (i, (spec, table)) in output.per_method.iter().enumerate() {
        blpr::metrics::write_metric_csv(&mut metrics, spec.name(), &output.truth, table, i == 0)?;
    }
    metrics.flush()?;

    let summary = SimulationSummaryJson {
        scenario: output.scenario.clone(),
        sigma: output.truth.sigma,
        large_set: output.truth.large_set.iter().map(|j| j + 1).collect(),
        methods: output
            .per_method
            .iter()
            .map(|(spec, table)| MethodSummaryJson {
                method: spec.name().to_string(),
                large: table.large,
                small: table.small,
            })
            .collect(),
    };
    let mut out = create_file(&args.out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut out, &summary)
        .map_err(|e| Failure::Validation(format!("summary serialization: {e}")))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CvJson {
    lambda_optimal: f64,
    grid: Vec<f64>,
    cve: Vec<f64>,
}

fn cmd_cv(args: &CvArgs) -> Result<(), Failure> {
    let data = load_dataset(&args.x, &args.y)?;
    let grid = match args.lambda1 {
        Some(l) => vec![l],
        None => blpr::default_grid(&data, args.grid_points),
    };
    let cfg = CvConfig {
        k_folds: args.k_folds,
        grid: grid.clone(),
        seed: derive_stream(args.seed, stream::CV_BASE),
    };
    let cv = cv_lasso_ols(&data, &cfg)?;
    let mut out = create_file(&args.out)?;
    serde_json::to_writer_pretty(
        &mut out,
        &CvJson {
            lambda_optimal: cv.lambda_optimal,
            grid,
            cve: cv.cve,
        },
    )
    .map_err(|e| Failure::Validation(format!("cv serialization: {e}")))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Condition8Json {
    projection: f64,
    schur: f64,
}

#[derive(Serialize)]
struct DiagnoseJson {
    margin: f64,
    holds: bool,
    /// 1-based indices.
    large_set: Vec<usize>,
    small_set: Vec<usize>,
    condition8: Option<Condition8Json>,
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), Failure> {
    let x_raw = csvio::read_matrix(&args.x)?;
    let n = x_raw.nrows();
    let data = Dataset::standardize(&x_raw, &nalgebra::DVector::zeros(n))?;

    let (support, signs, beta): (Vec<usize>, Vec<f64>, Option<nalgebra::DVector<f64>>) =
        match (&args.beta, &args.support) {
            (Some(beta_path), _) => {
                let beta = csvio::read_vector(beta_path)?;
                if beta.len() != data.p() {
                    return Err(Failure::Validation(format!(
                        "beta has {} entries, design has {} columns",
                        beta.len(),
                        data.p()
                    )));
                }
                let (large, _) = cliff_split(&beta, n, args.factor);
                if large.is_empty() {
                    return Err(Failure::Validation(
                        "no coefficient clears the cliff threshold; nothing to diagnose".into(),
                    ));
                }
                let signs = large.iter().map(|&j| beta[j].signum()).collect();
                (large, signs, Some(beta))
            }
            (None, Some(spec)) => {
                let mut support = Vec::new();
                for tok in spec.split(',') {
                    let tok = tok.trim();
                    if tok.is_empty() {
                        continue;
                    }
                    let idx: usize = tok.parse().map_err(|_| {
                        Failure::Validation(format!("bad support index {tok:?}"))
                    })?;
                    if idx == 0 || idx > data.p() {
                        return Err(Failure::Validation(format!(
                            "support index {idx} outside 1..={}",
                            data.p()
                        )));
                    }
                    support.push(idx - 1);
                }
                let signs = vec![1.0; support.len()];
                (support, signs, None)
            }
            (None, None) => {
                return Err(Failure::Validation(
                    "diagnose needs --beta or --support".into(),
                ))
            }
        };

    let decomp = block_decompose(data.x(), &support)?;
    let (margin, holds) = irrepresentable_margin(&decomp, &signs)?;
    let condition8 = match &beta {
        Some(beta) => {
            let small: Vec<usize> = (0..data.p()).filter(|j| !support.contains(j)).collect();
            let beta_small =
                nalgebra::DVector::from_fn(small.len(), |r, _| beta[small[r]]);
            let (projection, schur) = projection_magnitudes(&decomp, &beta_small, n)?;
            Some(Condition8Json { projection, schur })
        }
        None => None,
    };

    let small_set: Vec<usize> = (0..data.p())
        .filter(|j| !support.contains(j))
        .map(|j| j + 1)
        .collect();
    let payload = DiagnoseJson {
        margin,
        holds,
        large_set: support.iter().map(|j| j + 1).collect(),
        small_set,
        condition8,
    };
    let text = serde_json::to_string_pretty(&payload)
        .map_err(|e| Failure::Validation(format!("diagnose serialization: {e}")))?;
    match &args.out {
        Some(path) => {
            let mut out = create_file(path)?;
            writeln!(out, "{text}")?;
            out.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}
