//! Cache-free recomputation oracle for the cross-validation pipeline: the
//! support-unchanged caching must not move a single bit of the CVE.

use blpr::{cv_lasso_ols, fit_ols_on_support, lasso_path, make_folds, CvConfig, Dataset};
use nalgebra::{DMatrix, DVector};

/// Recomputes the CVE with no caching at all: every grid point gets its own
/// Lasso+OLS refit. Arithmetic mirrors the production pipeline (same fold
/// standardization, same prediction expression, same summation order).
fn brute_force_cve(data: &Dataset, config: &CvConfig) -> Vec<f64> {
    let folds = make_folds(data.n(), config.k_folds, config.seed).unwrap();
    let j_count = config.grid.len();
    let mut per_fold = DMatrix::zeros(folds.len(), j_count);

    for (k, fold) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..data.n()).filter(|i| !fold.contains(i)).collect();
        let x_tr = DMatrix::from_fn(train.len(), data.p(), |i, j| data.x()[(train[i], j)]);
        let y_tr = DVector::from_fn(train.len(), |i, _| data.y()[train[i]]);
        let train_ds = Dataset::standardize(&x_tr, &y_tr).unwrap();
        let path = lasso_path(&train_ds, &config.grid).unwrap();
        for (j, fit) in path.iter().enumerate() {
            let refit = fit_ols_on_support(&train_ds, &fit.support).unwrap();
            let intercept = train_ds.intercept_for(&refit.beta);
            let mut sum = 0.0;
            for &i in fold {
                let pred = intercept + data.x().row(i).transpose().dot(&refit.beta);
                let diff = data.y()[i] - pred;
                sum += diff * diff;
            }
            per_fold[(k, j)] = sum / fold.len() as f64;
        }
    }

    (0..j_count)
        .map(|j| {
            (0..folds.len()).map(|k| per_fold[(k, j)]).sum::<f64>() / folds.len() as f64
        })
        .collect()
}

fn grid(data: &Dataset, points: usize) -> Vec<f64> {
    blpr::default_grid(data, points)
}

#[test]
fn cached_cve_equals_brute_force_bitwise() {
    let ds = blpr::testutil::random_dataset(40, 10, 2024);
    let config = CvConfig {
        k_folds: 2,
        grid: grid(&ds, 5),
        seed: 11,
    };
    let cached = cv_lasso_ols(&ds, &config).unwrap();
    let brute = brute_force_cve(&ds, &config);
    assert_eq!(cached.cve.len(), brute.len());
    for (j, (a, b)) in cached.cve.iter().zip(brute.iter()).enumerate() {
        assert_eq!(a.to_bits(), b.to_bits(), "cve[{j}]: {a} vs {b}");
    }
}

#[test]
fn caching_soundness_holds_on_a_denser_grid() {
    let ds = blpr::testutil::random_dataset(60, 25, 77);
    let config = CvConfig {
        k_folds: 5,
        grid: grid(&ds, 40),
        seed: 3,
    };
    let cached = cv_lasso_ols(&ds, &config).unwrap();
    let brute = brute_force_cve(&ds, &config);
    for (j, (a, b)) in cached.cve.iter().zip(brute.iter()).enumerate() {
        assert_eq!(a.to_bits(), b.to_bits(), "cve[{j}]");
    }
    // the optimum is the largest lambda attaining the minimum
    let min = cached.cve.iter().cloned().fold(f64::INFINITY, f64::min);
    let first_min = config
        .grid
        .iter()
        .zip(cached.cve.iter())
        .find(|(_, &c)| c == min)
        .map(|(&l, _)| l)
        .unwrap();
    assert_eq!(cached.lambda_optimal, first_min);
}

#[test]
fn strong_signal_cv_recovers_the_planted_support() {
    // s = 3 planted coefficients at SNR 20; the cross-validated penalty must
    // recover exactly the planted support in at least 8 of 10 seeded runs
    use blpr::rng::{std_normal, stream_rng};
    let (n, p) = (60, 20);
    let mut hits = 0;
    for seed in 0..10u64 {
        let mut rng = stream_rng(seed, 5);
        let x = DMatrix::from_fn(n, p, |_, _| std_normal(&mut rng));
        let mut beta = DVector::zeros(p);
        beta[2] = 1.0;
        beta[7] = -0.8;
        beta[11] = 0.6;
        let signal = &x * &beta;
        let sigma = (signal.norm_squared() / (n as f64 * 20.0)).sqrt();
        let y = DVector::from_fn(n, |i, _| signal[i] + sigma * std_normal(&mut rng));
        let ds = Dataset::standardize(&x, &y).unwrap();
        let config = CvConfig {
            k_folds: 5,
            grid: grid(&ds, 50),
            seed,
        };
        let cv = cv_lasso_ols(&ds, &config).unwrap();
        let fit = blpr::fit_lasso(&ds, cv.lambda_optimal, None).unwrap();
        if fit.support == vec![2, 7, 11] {
            hits += 1;
        }
    }
    assert!(hits >= 8, "planted support recovered in only {hits}/10 runs");
}
