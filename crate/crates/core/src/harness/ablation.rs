//! The component ablation matrix: Nyström baseline, pooled agents, trainable
//! agents, mask, and mask+denoise, trained with paired seeds and folds so
//! row-to-row deltas are attributable to the added component.

use serde::{Deserialize, Serialize};

use super::train::train;
use super::{RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::mil::{AggregatorVariant, Bag};
use crate::numerics::Scalar;
use crate::synthdata::FoldPlan;

/// Component switches. Legal combinations form a chain:
/// trainable ⇒ agent, mask ⇒ trainable, denoise ⇒ mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub agent: bool,
    pub trainable: bool,
    pub mask: bool,
    pub denoise: bool,
}

impl AblationFlags {
    pub fn variant(&self) -> Result<AggregatorVariant> {
        match (self.agent, self.trainable, self.mask, self.denoise) {
            (false, false, false, false) => Ok(AggregatorVariant::Nystrom),
            (true, false, false, false) => Ok(AggregatorVariant::PoolingAgent),
            (true, true, false, false) => Ok(AggregatorVariant::TrainableAgent),
            (true, true, true, false) => Ok(AggregatorVariant::AmdMask),
            (true, true, true, true) => Ok(AggregatorVariant::Amd),
            _ => Err(Error::Config(format!(
                "ablation flags violate the component lattice: {self:?}"
            ))),
        }
    }
}

/// The five rows of the component matrix, in lattice order.
pub const ABLATION_ROWS: [AblationFlags; 5] = [
    AblationFlags {
        agent: false,
        trainable: false,
        mask: false,
        denoise: false,
    },
    AblationFlags {
        agent: true,
        trainable: false,
        mask: false,
        denoise: false,
    },
    AblationFlags {
        agent: true,
        trainable: true,
        mask: false,
        denoise: false,
    },
    AblationFlags {
        agent: true,
        trainable: true,
        mask: true,
        denoise: false,
    },
    AblationFlags {
        agent: true,
        trainable: true,
        mask: true,
        denoise: true,
    },
];

/// Train all five rows with identical seeds and folds.
pub fn ablation_suite<T: Scalar>(
    bags: &[Bag<T>],
    plan: &FoldPlan,
    base_cfg: &TrainConfig,
) -> Result<Vec<RunRecord>> {
    ABLATION_ROWS
        .iter()
        .map(|flags| {
            let cfg = TrainConfig {
                ablation_flags: Some(*flags),
                ..base_cfg.clone()
            };
            train(bags, plan, &cfg)
        })
        .collect()
}

/// Render the suite as CSV, including signed deltas against the previous row.
pub fn ablation_table_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "variant,agent,trainable,mask,denoise,acc_mean,acc_std,f1_mean,f1_std,auc_mean,auc_std,delta_auc_vs_prev\n",
    );
    let mut prev_auc: Option<f64> = None;
    for record in records {
        let flags = record.config.ablation_flags.unwrap_or_default();
        let delta = prev_auc
            .map(|p| format!("{:+.6}", record.mean.auc - p))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            record.variant,
            u8::from(flags.agent),
            u8::from(flags.trainable),
            u8::from(flags.mask),
            u8::from(flags.denoise),
            record.mean.acc,
            record.std.acc,
            record.mean.macro_f1,
            record.std.macro_f1,
            record.mean.auc,
            record.std.auc,
            delta,
        ));
        prev_auc = Some(record.mean.auc);
    }
    out
}
