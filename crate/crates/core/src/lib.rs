//! Attention aggregators for multiple-instance classification.
//!
//! A bag of instance feature vectors is reduced to a single prediction by an
//! attention aggregator. This crate implements the dense, Nyström,
//! pooling-agent, trainable-agent, and agent-with-mask-denoise variants on a
//! minimal hand-rolled numeric core, together with synthetic planted-instance
//! data, a cross-validated training harness, and finite-difference gradient
//! verification for every backward pass.

pub mod aggregators;
pub mod error;
pub mod harness;
pub mod mil;
pub mod numerics;
pub mod synthdata;

pub use aggregators::{AggregatorParams, AttentionConfig, ThresholdMode};
pub use error::{Error, Result};
pub use harness::{RunRecord, TrainConfig};
pub use mil::{AggregatorVariant, Bag, ModelParams, PipelineOutput};
pub use numerics::{AdamConfig, Matrix, ParamTensor, Rng, Scalar};
pub use synthdata::{DatasetConfig, FoldPlan};
