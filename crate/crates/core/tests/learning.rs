//! Dataset-level sanity of the generator/trainer pair: no signal means
//! chance-level AUC, saturated witnesses make even mean pooling separable.

use amd_mil::harness::{train, TrainConfig};
use amd_mil::mil::AggregatorVariant;
use amd_mil::synthdata::{generate_dataset, split_folds, DatasetConfig};

#[test]
fn zero_separation_trains_to_chance_level() {
    let dcfg = DatasetConfig {
        seed: 11,
        num_bags: 120,
        n_range: (20, 60),
        separation: 0.0,
        ..DatasetConfig::default()
    };
    let bags = generate_dataset::<f32>(&dcfg).unwrap();
    let plan = split_folds(&bags, 4, dcfg.seed, true).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        folds: 4,
        jobs: 4,
        ..TrainConfig::default()
    };
    let record = train(&bags, &plan, &cfg).unwrap();
    assert!(
        (0.4..=0.6).contains(&record.mean.auc),
        "null-signal AUC {:.4} outside [0.4, 0.6]",
        record.mean.auc
    );
}

#[test]
fn saturated_witnesses_make_mean_pooling_separable() {
    let dcfg = DatasetConfig {
        seed: 7,
        num_bags: 80,
        n_range: (10, 30),
        witness_rate: 1.0,
        separation: 3.0,
        ..DatasetConfig::default()
    };
    let bags = generate_dataset::<f32>(&dcfg).unwrap();
    let plan = split_folds(&bags, 4, dcfg.seed, true).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        folds: 4,
        jobs: 4,
        aggregator: AggregatorVariant::Mean,
        ..TrainConfig::default()
    };
    let record = train(&bags, &plan, &cfg).unwrap();
    assert!(
        record.mean.auc >= 0.95,
        "mean-pool AUC {:.4} below 0.95 on fully witnessed bags",
        record.mean.auc
    );
}
