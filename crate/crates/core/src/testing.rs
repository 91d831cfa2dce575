use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::model::{GpHyperparams, InputSpace, Normalization, UtilityPosterior};
use crate::seed;

pub(crate) fn hyper(dim: usize) -> GpHyperparams {
    GpHyperparams {
        lengthscales: vec![0.4; dim],
        signal_variance: 1.0,
        noise_level: 0.1,
    }
}

/// Posterior whose joint law at `points` is N(mean, cov) up to jitter.
pub(crate) fn posterior_with_moments(points: &[Vec<f64>], mean: &[f64], cov: &DMatrix<f64>) -> UtilityPosterior {
    let dim = points[0].len();
    UtilityPosterior::from_moments(
        InputSpace::Objective,
        Normalization::identity(dim),
        points.to_vec(),
        hyper(dim),
        &DVector::from_column_slice(mean),
        cov,
    )
    .unwrap()
}

/// Random covariance `A Aᵀ / n + 0.05 I`.
pub(crate) fn random_cov(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed, "test-cov", 0);
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05
}

pub(crate) fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed, "test-points", 0);
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
}
