//! The attention aggregator family.
//!
//! Five variants reduce a token sequence (class token at row 0, one row per
//! instance) to refined per-token features: exact dense self-attention, its
//! Nyström landmark approximation, agent attention with pooled agents, agent
//! attention with trainable agents, and the trainable-agent aggregator with
//! the mask-denoise mechanism. Each has a forward pass that records the
//! intermediates needed by an analytic backward; the backward passes are
//! verified against central finite differences.

mod agent;
mod amd;
mod dense;
mod nystrom;

pub use agent::{
    agent_aggregate_values, agent_attention, agent_backward, agent_forward, pooling_agent,
    segment_mean_pool, segment_mean_unpool, AgentCache,
};
pub use amd::{
    amd_backward, amd_forward, attention_scores, mask_denoise, mask_threshold, AmdCache, AmdOutputs,
};
pub use dense::{
    dense_backward, dense_forward, qkv_backward, qkv_project, self_attention_dense, DenseCache,
};
pub use nystrom::{
    nystrom_attention, nystrom_backward, nystrom_forward, nystrom_landmarks, pseudo_inverse_iter,
    NystromCache,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamTensor, Rng, Scalar};

/// How the scalar mask threshold τ is derived from the agent-aggregated
/// values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Mean over agents of a learned linear projection of V_A.
    Linear,
    /// Mean of all entries of the mask projection M.
    Mean,
    /// Fixed group-averaging kernels over the feature dim, then the mean
    /// across groups.
    Cnn,
}

/// Static configuration of the attention aggregators.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Feature dimension D.
    pub feature_dim: usize,
    /// Number of agent tokens n.
    pub agent_count: usize,
    /// Number of Nyström landmarks m.
    pub landmark_count: usize,
    /// Iterations of the pseudo-inverse recurrence.
    pub nystrom_iters: usize,
    pub threshold_mode: ThresholdMode,
    /// Group count for the Cnn threshold mode; must divide `feature_dim`.
    pub cnn_groups: usize,
    /// Render attention scores from the raw (pre-softmax) agent maps instead
    /// of the softmax-normalized ones.
    pub raw_eq13: bool,
}

impl AttentionConfig {
    pub fn new(feature_dim: usize) -> Self {
        AttentionConfig {
            feature_dim,
            agent_count: 8,
            landmark_count: 8,
            nystrom_iters: 6,
            threshold_mode: ThresholdMode::Linear,
            cnn_groups: 4,
            raw_eq13: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if self.agent_count == 0 {
            return Err(Error::Config("agent_count must be >= 1".into()));
        }
        if self.landmark_count == 0 {
            return Err(Error::Config("landmark_count must be >= 1".into()));
        }
        if self.nystrom_iters == 0 {
            return Err(Error::Config("nystrom_iters must be >= 1".into()));
        }
        if self.cnn_groups == 0 || !self.feature_dim.is_multiple_of(self.cnn_groups) {
            return Err(Error::Config(format!(
                "cnn_groups {} must divide feature_dim {}",
                self.cnn_groups, self.feature_dim
            )));
        }
        Ok(())
    }
}

/// All trainable matrices of one aggregator model. Which subset actually
/// trains depends on the variant; the rest sit untouched.
#[derive(Clone, Debug)]
pub struct AggregatorParams<T> {
    /// Query/key/value projections, D×D each, stored out×in.
    pub w_q: ParamTensor<T>,
    pub w_k: ParamTensor<T>,
    pub w_v: ParamTensor<T>,
    /// Agent token matrix, n×D.
    pub agent: ParamTensor<T>,
    /// Mask projection, D×D.
    pub w_mask: ParamTensor<T>,
    /// Denoise projection, D×D.
    pub w_denoise: ParamTensor<T>,
    /// Threshold projection, 1×D.
    pub w_tau: ParamTensor<T>,
    /// Learned class token, 1×D.
    pub class_token: ParamTensor<T>,
    /// Classifier head, C×D.
    pub head: ParamTensor<T>,
}

impl<T: Scalar> AggregatorParams<T> {
    /// Gaussian init scaled by 1/√D throughout.
    pub fn init(cfg: &AttentionConfig, classes: usize, rng: &mut Rng) -> Self {
        let d = cfg.feature_dim;
        let std = 1.0 / (d as f64).sqrt();
        AggregatorParams {
            w_q: ParamTensor::gaussian(d, d, std, rng),
            w_k: ParamTensor::gaussian(d, d, std, rng),
            w_v: ParamTensor::gaussian(d, d, std, rng),
            agent: ParamTensor::gaussian(cfg.agent_count, d, std, rng),
            w_mask: ParamTensor::gaussian(d, d, std, rng),
            w_denoise: ParamTensor::gaussian(d, d, std, rng),
            w_tau: ParamTensor::gaussian(1, d, std, rng),
            class_token: ParamTensor::gaussian(1, d, std, rng),
            head: ParamTensor::gaussian(classes, d, std, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.head.value.rows()
    }

    pub fn named(&self) -> Vec<(&'static str, &ParamTensor<T>)> {
        vec![
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("agent", &self.agent),
            ("w_mask", &self.w_mask),
            ("w_denoise", &self.w_denoise),
            ("w_tau", &self.w_tau),
            ("class_token", &self.class_token),
            ("head", &self.head),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut ParamTensor<T>)> {
        vec![
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("agent", &mut self.agent),
            ("w_mask", &mut self.w_mask),
            ("w_denoise", &mut self.w_denoise),
            ("w_tau", &mut self.w_tau),
            ("class_token", &mut self.class_token),
            ("head", &mut self.head),
        ]
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

    /// Convert every tensor to another precision, dropping optimizer state.
    pub fn cast<U: Scalar>(&self) -> AggregatorParams<U> {
        AggregatorParams {
            w_q: ParamTensor::new(self.w_q.value.cast()),
            w_k: ParamTensor::new(self.w_k.value.cast()),
            w_v: ParamTensor::new(self.w_v.value.cast()),
            agent: ParamTensor::new(self.agent.value.cast()),
            w_mask: ParamTensor::new(self.w_mask.value.cast()),
            w_denoise: ParamTensor::new(self.w_denoise.value.cast()),
            w_tau: ParamTensor::new(self.w_tau.value.cast()),
            class_token: ParamTensor::new(self.class_token.value.cast()),
            head: ParamTensor::new(self.head.value.cast()),
        }
    }

    pub fn validate_shapes(&self, cfg: &AttentionConfig) -> Result<()> {
        let d = cfg.feature_dim;
        let checks = [
            ("w_q", self.w_q.value.shape(), (d, d)),
            ("w_k", self.w_k.value.shape(), (d, d)),
            ("w_v", self.w_v.value.shape(), (d, d)),
            ("agent", self.agent.value.shape(), (cfg.agent_count, d)),
            ("w_mask", self.w_mask.value.shape(), (d, d)),
            ("w_denoise", self.w_denoise.value.shape(), (d, d)),
            ("w_tau", self.w_tau.value.shape(), (1, d)),
            ("class_token", self.class_token.value.shape(), (1, d)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if self.head.value.cols() != d {
            return Err(Error::Config(format!(
                "head has {} columns, expected {d}",
                self.head.value.cols()
            )));
        }
        Ok(())
    }
}

/// Gradients an attention backward pass hands back to the shared pipeline.
/// Parameter gradients for the projections are accumulated by the caller
/// from `d_q`/`d_k`/`d_v`; agent and denoise gradients (when the variant has
/// them) come back directly.
#[derive(Debug)]
pub struct AttentionGrads<T> {
    pub d_q: Matrix<T>,
    pub d_k: Matrix<T>,
    pub d_v: Matrix<T>,
    pub d_agent: Option<Matrix<T>>,
    pub d_w_denoise: Option<Matrix<T>>,
}
