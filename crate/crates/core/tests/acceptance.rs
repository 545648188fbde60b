//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured quantities. Run with `cargo test --test acceptance`.

use std::time::Instant;

use blpr::rng::stream_rng;
use blpr::sim::RunOptions;
use blpr::{
    block_decompose, covariance_matrix, cv_lasso_ols, fit_lasso, fit_ols_on_support,
    fit_partial_ridge, irrepresentable_margin, kkt_violation, lambda_max, lasso_path,
    make_folds, percentile_intervals_from_draws, residual_intervals_from_draws,
    run_scenario, soft_threshold, CoeffSpec, CovarianceKind, CvConfig, Dataset, DesignSpec,
    MethodSpec, QuantileMethod, Scenario,
};
use blpr::testutil::{orthonormal_design, random_dataset};
use nalgebra::{DMatrix, DVector};

#[test]
fn criterion_1_orthogonal_closed_forms() {
    let start = Instant::now();
    let (x, y) = orthonormal_design(64, 32, 4096);
    let ds = Dataset::from_standardized(x, y).unwrap();
    let n_inv = 1.0 / ds.n() as f64;
    let z: Vec<f64> = (0..ds.p())
        .map(|j| ds.x().column(j).dot(ds.y()) * n_inv)
        .collect();

    let lambda1 = 0.4 * lambda_max(&ds);
    let lasso = fit_lasso(&ds, lambda1, None).unwrap();
    let mut worst = 0.0f64;
    for (j, &zj) in z.iter().enumerate() {
        let expected = soft_threshold(zj, lambda1);
        let rel = (lasso.beta[j] - expected).abs() / expected.abs().max(1e-30);
        if expected != 0.0 {
            worst = worst.max(rel);
        } else {
            assert_eq!(lasso.beta[j], 0.0);
        }
    }
    assert!(worst <= 1e-10, "lasso closed-form relative error {worst}");

    let lambda2 = 0.3;
    let support = vec![0, 5, 9, 20];
    let ridge = fit_partial_ridge(&ds, &support, lambda2).unwrap();
    for (j, &zj) in z.iter().enumerate() {
        let expected = if support.contains(&j) {
            zj
        } else {
            zj / (1.0 + lambda2)
        };
        let rel = (ridge.beta[j] - expected).abs() / expected.abs().max(1e-30);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-10, "partial-ridge closed-form relative error {worst}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 orthogonal closed forms: PASS (worst rel err {worst:.2e}, {elapsed:?})"
    );
}

#[test]
fn criterion_2_kkt_oracle_suite() {
    let start = Instant::now();
    let mut rng = stream_rng(2, 0);
    use rand::Rng;
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let n = rng.random_range(20..=100);
        let p = rng.random_range(5..=200);
        let ds = random_dataset(n, p, 10_000 + case);
        let lmax = lambda_max(&ds);
        let lambda1 = lmax * [0.5, 0.05, 0.005][case as usize % 3];
        let fit = fit_lasso(&ds, lambda1, None).unwrap();
        assert!(fit.converged, "case {case} did not converge");
        let v = kkt_violation(&ds, &fit, lambda1);
        worst = worst.max(v);
        assert!(v <= 1e-6, "case {case} (n={n}, p={p}): violation {v}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 2 kkt oracle suite (100 instances): PASS (worst violation {worst:.2e}, {elapsed:?})"
    );
}

#[test]
fn criterion_3_unregularized_limit() {
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let n = 30 + (case as usize % 4) * 10;
        let p = 5 + (case as usize % 5);
        let ds = random_dataset(n, p, 777 + case);
        let fit = fit_lasso(&ds, 0.0, None).unwrap();
        let xtx = ds.x().transpose() * ds.x();
        let xty = ds.x().transpose() * ds.y();
        let ols_std = xtx.cholesky().unwrap().solve(&xty);
        let got = ds.to_standardized_coefficients(&fit.beta);
        let err = (got - ols_std).abs().max();
        worst = worst.max(err);
        assert!(err < 1e-6, "case {case}: max deviation {err}");
    }
    println!("ACCEPTANCE 3 unregularized limit (20 instances): PASS (worst deviation {worst:.2e})");
}

#[test]
fn criterion_4_cv_brute_force_equivalence() {
    let ds = random_dataset(40, 10, 424242);
    let config = CvConfig {
        k_folds: 2,
        grid: blpr::default_grid(&ds, 5),
        seed: 99,
    };
    let cached = cv_lasso_ols(&ds, &config).unwrap();

    // cache-free recomputation: refit the least squares at every grid point
    let folds = make_folds(ds.n(), config.k_folds, config.seed).unwrap();
    let mut per_fold = DMatrix::zeros(folds.len(), config.grid.len());
    for (k, fold) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..ds.n()).filter(|i| !fold.contains(i)).collect();
        let x_tr = DMatrix::from_fn(train.len(), ds.p(), |i, j| ds.x()[(train[i], j)]);
        let y_tr = DVector::from_fn(train.len(), |i, _| ds.y()[train[i]]);
        let train_ds = Dataset::standardize(&x_tr, &y_tr).unwrap();
        let path = lasso_path(&train_ds, &config.grid).unwrap();
        for (j, fit) in path.iter().enumerate() {
            let refit = fit_ols_on_support(&train_ds, &fit.support).unwrap();
            let intercept = train_ds.intercept_for(&refit.beta);
            let mut sum = 0.0;
            for &i in fold {
                let pred = intercept + ds.x().row(i).transpose().dot(&refit.beta);
                let diff = ds.y()[i] - pred;
                sum += diff * diff;
            }
            per_fold[(k, j)] = sum / fold.len() as f64;
        }
    }
    for (j, cached_cve) in cached.cve.iter().enumerate() {
        let brute =
            (0..folds.len()).map(|k| per_fold[(k, j)]).sum::<f64>() / folds.len() as f64;
        assert_eq!(
            cached_cve.to_bits(),
            brute.to_bits(),
            "cve[{j}] differs: {cached_cve} vs {brute}"
        );
    }
    println!("ACCEPTANCE 4 cv brute-force equivalence (bitwise): PASS");
}

#[test]
fn criterion_5_quantile_endpoint_oracle() {
    // draws column [10, 30, 20, 50, 40]; sorted order statistics are
    // 10, 20, 30, 40, 50; at alpha = 0.1 the type-7 quantiles are
    // q(.05) = 10 + 0.2 * 10 = 12 and q(.95) = 40 + 0.8 * 10 = 48
    let draws = DMatrix::from_column_slice(5, 1, &[10.0, 30.0, 20.0, 50.0, 40.0]);
    let point = DVector::from_column_slice(&[100.0]);
    let center = DVector::from_column_slice(&[1.0]);

    let residual = residual_intervals_from_draws(
        &draws,
        &point,
        &center,
        0.1,
        QuantileMethod::LinearInterpolation,
    )
    .unwrap();
    assert_eq!(residual.lower[0], 101.0 - 48.0);
    assert_eq!(residual.upper[0], 101.0 - 12.0);

    let percentile =
        percentile_intervals_from_draws(&draws, &point, 0.1, QuantileMethod::LinearInterpolation)
            .unwrap();
    assert_eq!(percentile.lower[0], 12.0);
    assert_eq!(percentile.upper[0], 48.0);

    // the pure-order-statistic alternative: k = ceil(q B) gives the 1st and
    // 5th order statistics at this level
    let os = percentile_intervals_from_draws(&draws, &point, 0.1, QuantileMethod::OrderStatistic)
        .unwrap();
    assert_eq!(os.lower[0], 10.0);
    assert_eq!(os.upper[0], 50.0);

    // multi-column: endpoints must be computed per column
    let draws2 = DMatrix::from_fn(4, 2, |i, j| (i as f64 + 1.0) * if j == 0 { 1.0 } else { -2.0 });
    let point2 = DVector::zeros(2);
    let p2 = percentile_intervals_from_draws(
        &draws2,
        &point2,
        0.5,
        QuantileMethod::LinearInterpolation,
    )
    .unwrap();
    assert_eq!(p2.lower[0], 1.75);
    assert_eq!(p2.upper[0], 3.25);
    assert_eq!(p2.lower[1], -6.5);
    assert_eq!(p2.upper[1], -3.5);

    println!("ACCEPTANCE 5 quantile/endpoint oracle: PASS");
}

fn desk_scenario(coeffs: CoeffSpec) -> Scenario {
    Scenario {
        n: 200,
        p: 150,
        design: DesignSpec::NormalToeplitz { rho: 0.5 },
        coeffs,
        snr: 10.0,
        reps: 200,
        b_replicates: 300,
        alpha: 0.05,
        seed: 20240601,
        misspec: None,
    }
}

#[test]
fn criterion_6_desk_scale_hard_sparsity_coverage() {
    let start = Instant::now();
    let scenario = desk_scenario(CoeffSpec::Hard {
        s: 5,
        low: 1.0 / 3.0,
        high: 1.0,
    });
    let methods = [
        MethodSpec::parse("rBLPR").unwrap(),
        MethodSpec::parse("pBLPR").unwrap(),
    ];
    let out = run_scenario(&scenario, &methods, &RunOptions::default()).unwrap();
    let mut line = String::new();
    let mut failures = Vec::new();
    for (spec, table) in &out.per_method {
        let cov = table.large.unwrap().coverage;
        line.push_str(&format!("{} large coverage {:.4}; ", spec.name(), cov));
        if !(0.88..=0.99).contains(&cov) {
            failures.push(format!(
                "{} large-coefficient coverage {cov:.4} outside [0.88, 0.99]",
                spec.name()
            ));
        }
    }
    let elapsed = start.elapsed();
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE 6 desk-scale hard-sparsity coverage: {verdict} ({line}{elapsed:?})");
    assert!(failures.is_empty(), "{}", failures.join("; "));
}

#[test]
fn criterion_7_weak_sparsity_contrast() {
    let start = Instant::now();
    let scenario = desk_scenario(CoeffSpec::Weak {
        s: 5,
        mean: 1.0,
        var: 0.001,
        decay: 2.0,
    });
    let methods = [
        MethodSpec::parse("rBLPR").unwrap(),
        MethodSpec::parse("rBLassoOLS").unwrap(),
    ];
    let out = run_scenario(&scenario, &methods, &RunOptions::default()).unwrap();
    let lpr = out.per_method[0].1.small.unwrap();
    let lols = out.per_method[1].1.small.unwrap();

    assert!(
        lpr.coverage >= 0.85,
        "Bootstrap LPR small-coefficient coverage {} below 0.85",
        lpr.coverage
    );
    assert!(
        lols.coverage <= 0.30,
        "Bootstrap Lasso+OLS small-coefficient coverage {} above 0.30",
        lols.coverage
    );
    assert!(
        lols.mean_length < 0.05,
        "Bootstrap Lasso+OLS small-coefficient length {} not below 0.05",
        lols.mean_length
    );
    assert!(
        lpr.mean_length > lols.mean_length && lpr.mean_length.is_finite(),
        "Bootstrap LPR small-coefficient length {} not larger and finite",
        lpr.mean_length
    );
    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 7 weak-sparsity contrast: PASS (LPR cov {:.4} len {:.4}; LassoOLS cov {:.4} len {:.4}; {elapsed:?})",
        lpr.coverage, lpr.mean_length, lols.coverage, lols.mean_length
    );
}

#[test]
fn criterion_8_diagnostics_fixtures() {
    // orthogonal design: C21 vanishes so the margin is exactly 1
    let (x, _) = orthonormal_design(64, 20, 808);
    let d = block_decompose(&x, &[0, 1, 2, 3, 4]).unwrap();
    let (margin, holds) = irrepresentable_margin(&d, &[1.0, -1.0, 1.0, -1.0, 1.0]).unwrap();
    assert!(holds);
    assert!((margin - 1.0).abs() < 1e-10, "orthogonal margin {margin}");

    // exponential-decay covariance realized exactly at rho = 0.5, s = 5,
    // p = 50: the condition holds for every sign pattern tried
    let sigma = covariance_matrix(CovarianceKind::ExpDecay, 0.5, 50).unwrap();
    let (q_raw, _) = orthonormal_design(64, 50, 909);
    let l = sigma.cholesky().unwrap().l();
    let x = q_raw * l.transpose();
    let d = block_decompose(&x, &(0..5).collect::<Vec<_>>()).unwrap();
    let mut min_margin = f64::INFINITY;
    for trial in 0..32u32 {
        let signs: Vec<f64> = (0..5)
            .map(|j| if (trial >> j) & 1 == 0 { 1.0 } else { -1.0 })
            .collect();
        let (margin, holds) = irrepresentable_margin(&d, &signs).unwrap();
        min_margin = min_margin.min(margin);
        assert!(holds, "exp-decay fixture violated at signs {signs:?}");
    }
    println!(
        "ACCEPTANCE 8 diagnostics fixtures: PASS (orthogonal margin {margin:.12}, exp-decay min margin {min_margin:.6})"
    );
}

#[test]
fn scenario_generators_deterministic_from_seed() {
    // supporting check for the determinism criterion (the byte-level check
    // lives in the CLI crate where the binary is available): two in-process
    // runs of the same scenario on different thread pools must agree bitwise
    let mut scenario = desk_scenario(CoeffSpec::Hard {
        s: 3,
        low: 1.0 / 3.0,
        high: 1.0,
    });
    scenario.n = 40;
    scenario.p = 15;
    scenario.reps = 3;
    scenario.b_replicates = 20;
    let methods = [MethodSpec::parse("pBLPR").unwrap()];
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool3 = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = pool1.install(|| run_scenario(&scenario, &methods, &RunOptions::default()).unwrap());
    let b = pool3.install(|| run_scenario(&scenario, &methods, &RunOptions::default()).unwrap());
    for j in 0..scenario.p {
        assert_eq!(
            a.per_method[0].1.coverage[j].to_bits(),
            b.per_method[0].1.coverage[j].to_bits()
        );
        assert_eq!(
            a.per_method[0].1.mean_length[j].to_bits(),
            b.per_method[0].1.mean_length[j].to_bits()
        );
    }
    println!("SUPPORT thread-count determinism (library level): PASS");
}
