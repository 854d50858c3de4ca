#![allow(dead_code)]

use std::path::Path;

use estf::config::RunConfig;
use estf::core::model::ModelConfig;
use estf::core::training::TrainConfig;
use estf::dataset::{self, GenOptions, Manifest};

/// Four classes on a 16x16 sensor, ten samples each, one second long.
pub fn toy_options(seed: u64) -> GenOptions {
    GenOptions {
        classes: 4,
        per_class: 10,
        duration_us: 1_000_000,
        width: 16,
        height: 16,
        seed,
        ..GenOptions::default()
    }
}

pub fn toy_dataset(dir: &Path, seed: u64) -> Manifest {
    dataset::generate(&toy_options(seed), dir).unwrap()
}

/// Toy model on the full 16x16 plane with a short momentum schedule.
pub fn toy_run(epochs: usize) -> RunConfig {
    RunConfig {
        model: ModelConfig { height: 16, width: 16, ..ModelConfig::toy() },
        train: TrainConfig {
            batch_size: 4,
            epochs,
            momentum: 0.9,
            lr0: 0.02,
            decay_every: 20,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}
