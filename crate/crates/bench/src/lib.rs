//! Shared fixtures for the kernel benchmarks in `benches/`.

use openset_core::data::{make_openset_mixture, OpenSetConfig, OpenSetData};
use openset_core::nn::{init_mlp, ModelParams};
use openset_core::rng::rng_from;
use rand::Rng;

/// Planted open-set data sized like the demo configs.
pub fn planted_data(seed: u64) -> OpenSetData {
    make_openset_mixture(&OpenSetConfig {
        dim: 10,
        k_seen: 4,
        k_unseen: 2,
        labels_per_class: 10,
        unlabeled_per_class: 50,
        val_per_class: 5,
        test_per_class: 50,
        cluster_separation: 4.0,
        cluster_stddev: 0.8,
        unfriendly_fraction: 0.1,
        unfriendly_noise_scale: 10.0,
        seed,
    })
    .expect("fixture config is valid")
}

pub fn network(hidden: &[usize], dim: usize, k: usize, seed: u64) -> ModelParams {
    let mut sizes = vec![dim];
    sizes.extend_from_slice(hidden);
    init_mlp(&sizes, k, seed).expect("valid layer sizes")
}

/// Heavy-tailed nonnegative scores, shaped like squared gradient distances.
pub fn heavy_tailed_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..n)
        .map(|_| (-rng.random::<f64>().ln()).powi(3))
        .collect()
}
