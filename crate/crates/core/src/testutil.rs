//! Deterministic fixtures shared by the unit, integration and acceptance
//! test suites. Not part of the public API surface.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dataset::Dataset;
use crate::rng::{std_normal, stream_rng};

/// A design with exactly orthonormal columns in the `(1/n) X'X = I` sense,
/// each column orthogonal to the constant vector (so means are zero), plus a
/// response carrying a sparse signal. Requires `p < n`.
pub fn orthonormal_design(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    assert!(p < n, "orthonormal_design needs p < n");
    let mut rng = stream_rng(seed, 0);
    let mut m = DMatrix::from_fn(n, p + 1, |_, _| std_normal(&mut rng));
    for i in 0..n {
        m[(i, 0)] = 1.0;
    }
    let qr = m.qr();
    let q = qr.q();
    let x = DMatrix::from_fn(n, p, |i, j| q[(i, j + 1)] * (n as f64).sqrt());

    let mut beta = DVector::zeros(p);
    for j in 0..p.min(4) {
        beta[j] = if j % 2 == 0 { 1.0 } else { -0.7 };
    }
    let noise = DVector::from_fn(n, |_, _| 0.3 * std_normal(&mut rng));
    let y = &x * beta + noise;
    (x, y)
}

/// A standardized dataset with Gaussian design entries and a sparse signal.
pub fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 1);
    let x = DMatrix::from_fn(n, p, |_, _| std_normal(&mut rng));
    let mut beta = DVector::zeros(p);
    for j in 0..p.min(3) {
        beta[j] = [1.5, -1.0, 0.5][j];
    }
    let noise = DVector::from_fn(n, |_, _| 0.5 * std_normal(&mut rng));
    let y = &x * beta + noise;
    Dataset::standardize(&x, &y).expect("fixture data is well formed")
}

/// Uniform matrix with entries in `lo..hi`.
pub fn uniform_matrix(n: usize, p: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 2);
    DMatrix::from_fn(n, p, |_, _| rng.random_range(lo..hi))
}
