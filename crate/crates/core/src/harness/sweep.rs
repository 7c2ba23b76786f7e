//! Agent-token-count sweep: one paired run per count.

use super::train::train;
use super::{RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::mil::Bag;
use crate::numerics::Scalar;
use crate::synthdata::FoldPlan;

/// Train once per agent count, sharing seed and folds.
pub fn agent_count_sweep<T: Scalar>(
    bags: &[Bag<T>],
    plan: &FoldPlan,
    base_cfg: &TrainConfig,
    counts: &[usize],
) -> Result<Vec<RunRecord>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Config("agent counts must be positive".into()));
    }
    counts
        .iter()
        .map(|&n| {
            let cfg = TrainConfig {
                n_agents: n,
                ..base_cfg.clone()
            };
            train(bags, plan, &cfg)
        })
        .collect()
}

/// CSV of (n, ACC, AUC), one row per sweep point.
pub fn sweep_table_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("n,acc,auc\n");
    for record in records {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            record.config.n_agents, record.mean.acc, record.mean.auc
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, split_folds, DatasetConfig};

    #[test]
    fn singleton_sweep_equals_a_plain_train_run() {
        let dcfg = DatasetConfig {
            seed: 3,
            num_bags: 18,
            feature_dim: 6,
            n_range: (3, 7),
            witness_rate: 0.4,
            class_count: 2,
            separation: 2.0,
            noise_std: 0.5,
        };
        let bags = generate_dataset::<f32>(&dcfg).unwrap();
        let plan = split_folds(&bags, 3, 3, true).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            folds: 3,
            n_agents: 3,
            landmarks: 2,
            cnn_groups: 2,
            ..TrainConfig::default()
        };
        let swept = agent_count_sweep(&bags, &plan, &cfg, &[3]).unwrap();
        assert_eq!(swept.len(), 1);
        let plain = train(&bags, &plan, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&swept[0]).unwrap(),
            serde_json::to_string(&plain).unwrap()
        );
        let csv = sweep_table_csv(&swept);
        assert_eq!(csv.trim().lines().count(), 2);
    }

    #[test]
    fn zero_or_empty_counts_are_rejected() {
        let dcfg = DatasetConfig {
            seed: 3,
            num_bags: 6,
            feature_dim: 4,
            n_range: (2, 4),
            witness_rate: 0.5,
            class_count: 2,
            separation: 1.0,
            noise_std: 1.0,
        };
        let bags = generate_dataset::<f32>(&dcfg).unwrap();
        let plan = split_folds(&bags, 2, 0, true).unwrap();
        let cfg = TrainConfig::default();
        assert!(agent_count_sweep(&bags, &plan, &cfg, &[]).is_err());
        assert!(agent_count_sweep(&bags, &plan, &cfg, &[2, 0]).is_err());
    }
}
