//! Committed synthetic scenarios and a dataset built from the training ones.

use std::path::PathBuf;
use std::sync::Arc;

use psm::config::Config;
use psm::dataset::{build_dataset, Recording, SafetyDataset};
use psm::synthetic::{generate_synthetic, LabeledSample, SyntheticScenario};

pub fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn load(name: &str) -> SyntheticScenario {
    toml::from_str(&std::fs::read_to_string(path(name)).unwrap()).unwrap()
}

pub fn generate(scenario: &SyntheticScenario, config: &Config) -> Vec<LabeledSample> {
    generate_synthetic(scenario, &config.body, config.sample_rate()).unwrap()
}

pub fn train_dataset(config: &Config) -> Arc<SafetyDataset> {
    let recordings: Vec<Recording> = ["train_1.toml", "train_2.toml", "train_3.toml"]
        .iter()
        .map(|name| Recording {
            id: name.to_string(),
            samples: generate(&load(name), config).iter().map(|s| s.sample).collect(),
        })
        .collect();
    Arc::new(build_dataset(&recordings, &config.grid, config.body.length, config.build).unwrap())
}
