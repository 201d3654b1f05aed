//! Fixtures shared by the clustering and matching benchmarks.

use pnp_core::datagen::{generate_mixture, split_gcd};
use pnp_core::numerics::Matrix;
use pnp_core::seeding::rng_for;
use pnp_core::FeatureMatrix;
use rand::Rng;

/// Normalized features of a mixture with three of every four classes labelled
/// at half density: (all rows, unlabelled rows only).
pub fn mixture_features(classes: usize, per_class: usize, dim: usize, seed: u64) -> (FeatureMatrix, FeatureMatrix) {
    let points = generate_mixture(classes, dim, per_class, 6.0, 1.0, seed).expect("valid mixture");
    let ds = split_gcd(&points, 0.75, 0.5, seed).expect("valid split");
    let unl = ds.unlabelled_matrix();
    let full = ds.labelled_matrix().vstack(&unl).expect("same width");
    (
        FeatureMatrix::normalize(&full).expect("nonzero rows"),
        FeatureMatrix::normalize(&unl).expect("nonzero rows"),
    )
}

/// Square cost matrix with uniform entries in [0, 1).
pub fn random_cost(n: usize, seed: u64) -> Matrix {
    let mut rng = rng_for(&[seed, n as u64]);
    let data = (0..n * n).map(|_| rng.random::<f64>()).collect();
    Matrix::from_vec(n, n, data).expect("n*n entries")
}
