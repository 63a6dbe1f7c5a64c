//! Shared fixtures for the kernel benchmarks.

use pspc_core::store::dataset::{ImageDataset, ImageShape};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

/// A seeded dataset of n images with values in [-1, 1].
pub fn bench_dataset(n: usize, h: usize, w: usize, seed: u64) -> ImageDataset {
    let shape = ImageShape::new(h, w, 1).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * shape.len())
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    ImageDataset::from_values("bench", shape, data).unwrap()
}

/// A seeded noisy state of the dataset's image length.
pub fn bench_state(len: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-scale..=scale)).collect()
}
