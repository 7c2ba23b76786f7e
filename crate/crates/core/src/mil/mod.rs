//! The multiple-instance abstraction: bags of instance features with a
//! bag-level label, the label rule, and the classifier pipeline that runs a
//! chosen aggregator over a bag.

mod baselines;
mod pipeline;

pub use baselines::{
    abmil_aggregate, max_pool_aggregate, mean_pool_aggregate, AbmilParams, ABMIL_HIDDEN,
};
pub use pipeline::{
    pipeline_forward, pipeline_loss, pipeline_loss_and_grad, prepend_class_token, Intermediates,
    PipelineOutput,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregators::{AggregatorParams, AttentionConfig};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, Matrix, ParamTensor, Rng, Scalar};

/// A bag of instance feature rows plus its label. Instance labels are only
/// known for synthetic data.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag<T> {
    pub features: Matrix<T>,
    pub label: usize,
    pub instance_labels: Option<Vec<u8>>,
    pub id: String,
}

impl<T: Scalar> Bag<T> {
    pub fn instances(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// A bag is positive iff any of its instances is.
pub fn bag_label_rule(instance_labels: &[u8]) -> Result<usize> {
    if instance_labels.is_empty() {
        return Err(Error::Domain("bag_label_rule: empty instance list".into()));
    }
    Ok(usize::from(instance_labels.iter().any(|&l| l > 0)))
}

/// Every aggregator the pipeline can dispatch to. `AmdMask` is the
/// mask-without-denoise ablation row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorVariant {
    Mean,
    Max,
    Abmil,
    Dense,
    Nystrom,
    PoolingAgent,
    TrainableAgent,
    AmdMask,
    Amd,
}

impl AggregatorVariant {
    pub const ALL: [AggregatorVariant; 9] = [
        AggregatorVariant::Mean,
        AggregatorVariant::Max,
        AggregatorVariant::Abmil,
        AggregatorVariant::Dense,
        AggregatorVariant::Nystrom,
        AggregatorVariant::PoolingAgent,
        AggregatorVariant::TrainableAgent,
        AggregatorVariant::AmdMask,
        AggregatorVariant::Amd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorVariant::Mean => "mean",
            AggregatorVariant::Max => "max",
            AggregatorVariant::Abmil => "abmil",
            AggregatorVariant::Dense => "dense",
            AggregatorVariant::Nystrom => "nystrom",
            AggregatorVariant::PoolingAgent => "pooling-agent",
            AggregatorVariant::TrainableAgent => "trainable-agent",
            AggregatorVariant::AmdMask => "amd-mask",
            AggregatorVariant::Amd => "amd",
        }
    }

    /// Variants that prepend a class token and read their prediction from it.
    pub fn token_based(&self) -> bool {
        !matches!(
            self,
            AggregatorVariant::Mean | AggregatorVariant::Max | AggregatorVariant::Abmil
        )
    }

    /// Parameter names the optimizer updates for this variant.
    pub fn trainable_names(&self) -> &'static [&'static str] {
        match self {
            AggregatorVariant::Mean | AggregatorVariant::Max => &["head"],
            AggregatorVariant::Abmil => &["gate_v", "gate_u", "gate_w", "head"],
            AggregatorVariant::Dense
            | AggregatorVariant::Nystrom
            | AggregatorVariant::PoolingAgent => &["w_q", "w_k", "w_v", "class_token", "head"],
            AggregatorVariant::TrainableAgent => {
                &["w_q", "w_k", "w_v", "agent", "class_token", "head"]
            }
            AggregatorVariant::AmdMask => &[
                "w_q",
                "w_k",
                "w_v",
                "agent",
                "w_mask",
                "w_tau",
                "class_token",
                "head",
            ],
            AggregatorVariant::Amd => &[
                "w_q",
                "w_k",
                "w_v",
                "agent",
                "w_mask",
                "w_tau",
                "w_denoise",
                "class_token",
                "head",
            ],
        }
    }
}

impl fmt::Display for AggregatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown aggregator '{s}' (expected one of: {})",
                    Self::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// Trainable state for one model, matching the variant family in use.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum ModelParams<T> {
    /// Head only; mean and max pooling.
    Pooled {
        head: ParamTensor<T>,
    },
    Abmil(AbmilParams<T>),
    Attention(AggregatorParams<T>),
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(
        variant: AggregatorVariant,
        cfg: &AttentionConfig,
        classes: usize,
        rng: &mut Rng,
    ) -> Self {
        let d = cfg.feature_dim;
        let std = 1.0 / (d as f64).sqrt();
        match variant {
            AggregatorVariant::Mean | AggregatorVariant::Max => ModelParams::Pooled {
                head: ParamTensor::gaussian(classes, d, std, rng),
            },
            AggregatorVariant::Abmil => {
                ModelParams::Abmil(AbmilParams::init(d, classes, ABMIL_HIDDEN, rng))
            }
            _ => ModelParams::Attention(AggregatorParams::init(cfg, classes, rng)),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &ParamTensor<T>)> {
        match self {
            ModelParams::Pooled { head } => vec![("head", head)],
            ModelParams::Abmil(p) => p.named(),
            ModelParams::Attention(p) => p.named(),
        }
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut ParamTensor<T>)> {
        match self {
            ModelParams::Pooled { head } => vec![("head", head)],
            ModelParams::Abmil(p) => p.named_mut(),
            ModelParams::Attention(p) => p.named_mut(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.named()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.named_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p)
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.named_mut() {
            p.zero_grad();
        }
    }

    /// Adam-step exactly the parameters the variant trains.
    pub fn step(&mut self, variant: AggregatorVariant, adam: &AdamConfig) -> Result<()> {
        for name in variant.trainable_names() {
            let p = self.get_mut(name).ok_or_else(|| {
                Error::Config(format!("variant {variant} expects parameter {name}"))
            })?;
            p.adam_step(adam)?;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelParams::Pooled { head } => head.value.rows(),
            ModelParams::Abmil(p) => p.head.value.rows(),
            ModelParams::Attention(p) => p.head.value.rows(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        match self {
            ModelParams::Pooled { head } => ModelParams::Pooled {
                head: ParamTensor::new(head.value.cast()),
            },
            ModelParams::Abmil(p) => ModelParams::Abmil(p.cast()),
            ModelParams::Attention(p) => ModelParams::Attention(p.cast()),
        }
    }

    /// Tensor list for the checkpoint file.
    pub fn checkpoint_tensors(&self) -> Vec<(&'static str, &Matrix<T>)> {
        self.named()
            .into_iter()
            .map(|(n, p)| (n, &p.value))
            .collect()
    }

    /// Rebuild from checkpoint tensors, validating shape agreement.
    pub fn from_checkpoint(
        variant: AggregatorVariant,
        tensors: Vec<(String, Matrix<T>)>,
    ) -> Result<Self> {
        let find = |name: &str| -> Result<ParamTensor<T>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| ParamTensor::new(m.clone()))
                .ok_or_else(|| Error::Config(format!("checkpoint missing tensor {name}")))
        };
        match variant {
            AggregatorVariant::Mean | AggregatorVariant::Max => Ok(ModelParams::Pooled {
                head: find("head")?,
            }),
            AggregatorVariant::Abmil => Ok(ModelParams::Abmil(AbmilParams {
                gate_v: find("gate_v")?,
                gate_u: find("gate_u")?,
                gate_w: find("gate_w")?,
                head: find("head")?,
            })),
            _ => Ok(ModelParams::Attention(AggregatorParams {
                w_q: find("w_q")?,
                w_k: find("w_k")?,
                w_v: find("w_v")?,
                agent: find("agent")?,
                w_mask: find("w_mask")?,
                w_denoise: find("w_denoise")?,
                w_tau: find("w_tau")?,
                class_token: find("class_token")?,
                head: find("head")?,
            })),
        }
    }
}
