//! Seeded instance generators shared by the benchmarks.

use linkfed_core::{Label, LabeledDataset};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// d x m uniform [-1, 1] sample with alternating labels.
pub fn random_dataset(d: usize, m: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0));
    let y = (0..m).map(|i| Label::from_sign(i % 2 == 0)).collect();
    LabeledDataset::from_parts(x, y).expect("valid random dataset")
}

/// m x m similarity matrix in [-1, 1].
pub fn random_scores(m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0))
}
