//! Shared fixtures for the benchmarks.

use fpsr_core::data::{build_pairs, DatasetSpec, ImagePair, ResampleMethod, Source, SplitFractions};
use fpsr_core::{Tensor, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in [-1, 1).
pub fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// `count` phantom pairs at the given scale and HR side, all in one list.
pub fn phantom_pairs(count: usize, scale: usize, hr: usize) -> Vec<ImagePair> {
    let spec = DatasetSpec {
        source: Source::Phantoms(count),
        scale,
        crop: hr,
        splits: SplitFractions([1.0, 0.0, 0.0]),
        seed: 0,
        method: ResampleMethod::Bicubic,
    };
    build_pairs(&spec)
        .expect("phantom dataset")
        .into_iter()
        .map(|(p, _)| p)
        .collect()
}

/// The desk-scale ×2 configuration: 64×64 HR, four RRDBs, batch 4.
pub fn desk_config() -> TrainConfig {
    let mut c = TrainConfig {
        scale: 2,
        hr_size: 64,
        batch_size: 4,
        lr_g: 1e-3,
        ..TrainConfig::default()
    };
    c.normalize();
    c
}
