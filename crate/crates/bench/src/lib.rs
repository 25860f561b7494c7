//! Seeded inputs shared by the kernel benchmarks.

use misnn::rng::stream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian design with a sparse linear response: the first `k` columns carry
/// unit coefficients.
pub fn sparse_regression(n: usize, p: usize, k: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = stream(seed, &[0]);
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n, |i, _| {
        (0..k.min(p)).map(|j| z[(i, j)]).sum::<f64>() + 0.5 * rng.sample::<f64, _>(StandardNormal)
    });
    (z, y)
}

/// `m` estimate vectors of length `d` with unit-scale standard errors.
pub fn estimates(m: usize, d: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = stream(seed, &[1]);
    let est = (0..m)
        .map(|_| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let se = (0..m)
        .map(|_| DVector::from_fn(d, |_, _| 0.5 + rng.random::<f64>()))
        .collect();
    (est, se)
}
