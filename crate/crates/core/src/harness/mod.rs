//! Training loop, metrics, ablation matrix, agent-count sweep, and
//! attention export.

pub mod ablation;
pub mod export;
pub mod gradcheck;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use ablation::{ablation_suite, ablation_table_csv, AblationFlags, ABLATION_ROWS};
pub use export::export_attention;
pub use gradcheck::{gradcheck_variant, GradCheckReport};
pub use metrics::{binary_auc, metric_acc, metric_auc_ovr, metric_macro_f1};
pub use sweep::{agent_count_sweep, sweep_table_csv};
pub use train::{evaluate, train, train_with_models, EvalReport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregators::{AttentionConfig, ThresholdMode};
use crate::error::{Error, Result};
use crate::mil::AggregatorVariant;
use crate::numerics::AdamConfig;

/// Everything one training run needs; serializable so a config echo fully
/// reproduces the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub aggregator: AggregatorVariant,
    /// When set, overrides `aggregator` via the component lattice.
    pub ablation_flags: Option<AblationFlags>,
    pub n_agents: usize,
    pub landmarks: usize,
    pub nystrom_iters: usize,
    pub threshold_mode: ThresholdMode,
    pub cnn_groups: usize,
    pub raw_eq13: bool,
    /// Early stopping on held-out-from-train AUC; 0 disables.
    pub early_stop_patience: usize,
    pub folds: usize,
    pub stratified: bool,
    /// Fold-level parallelism.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            weight_decay: 1e-5,
            epochs: 30,
            seed: 7,
            aggregator: AggregatorVariant::Amd,
            ablation_flags: None,
            n_agents: 8,
            landmarks: 8,
            nystrom_iters: 6,
            threshold_mode: ThresholdMode::Linear,
            cnn_groups: 4,
            raw_eq13: false,
            early_stop_patience: 0,
            folds: 6,
            stratified: true,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    /// The variant actually trained: explicit ablation flags win.
    pub fn resolve_variant(&self) -> Result<AggregatorVariant> {
        match &self.ablation_flags {
            Some(flags) => flags.variant(),
            None => Ok(self.aggregator),
        }
    }

    pub fn attention_config(&self, feature_dim: usize) -> AttentionConfig {
        AttentionConfig {
            feature_dim,
            agent_count: self.n_agents,
            landmark_count: self.landmarks,
            nystrom_iters: self.nystrom_iters,
            threshold_mode: self.threshold_mode,
            cnn_groups: self.cnn_groups,
            raw_eq13: self.raw_eq13,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.folds == 0 {
            return Err(Error::Config("folds must be >= 1".into()));
        }
        if self.n_agents == 0 || self.landmarks == 0 {
            return Err(Error::Config(
                "agent and landmark counts must be >= 1".into(),
            ));
        }
        if let Some(flags) = &self.ablation_flags {
            flags.variant()?;
        }
        Ok(())
    }
}

/// Per-fold results.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    pub acc: f64,
    pub macro_f1: f64,
    pub auc: f64,
    pub test_bags: Vec<String>,
    /// Per-instance attention for every test bag.
    pub attention: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: f64,
    pub macro_f1: f64,
    pub auc: f64,
}

/// Full echo of one run: config, resolved variant, optimizer defaults, and
/// per-fold metrics with mean and standard deviation across folds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub variant: AggregatorVariant,
    pub optimizer: AdamConfig,
    pub classes: usize,
    pub feature_dim: usize,
    pub folds: Vec<FoldRecord>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl RunRecord {
    pub fn summarize(&mut self) {
        let acc: Vec<f64> = self.folds.iter().map(|f| f.acc).collect();
        let f1: Vec<f64> = self.folds.iter().map(|f| f.macro_f1).collect();
        let auc: Vec<f64> = self.folds.iter().map(|f| f.auc).collect();
        self.mean = MetricSummary {
            acc: metrics::mean(&acc),
            macro_f1: metrics::mean(&f1),
            auc: metrics::mean(&auc),
        };
        self.std = MetricSummary {
            acc: metrics::std_dev(&acc),
            macro_f1: metrics::std_dev(&f1),
            auc: metrics::std_dev(&auc),
        };
    }
}
