#![allow(dead_code)]

use reweighter_core::dataset::{generate, Dataset, DatasetGenConfig};
use reweighter_core::influence::TrainingConfig;
use reweighter_core::session::{Session, SessionConfig};

pub fn small_dataset(seed: u64) -> Dataset {
    generate(&DatasetGenConfig {
        num_classes: 3,
        per_class: 40,
        noise_ratio: 0.2,
        imbalance_factor: 2.0,
        val_per_class: 4,
        test_per_class: 10,
        class_separation: 4.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn session_config() -> SessionConfig {
    SessionConfig { training: TrainingConfig { epochs: 80, ..Default::default() }, ..Default::default() }
}

pub fn small_session(seed: u64) -> Session {
    Session::new(small_dataset(seed), session_config()).unwrap()
}
