//! Deterministic synthetic planted-instance bags, the portable bag file
//! format, and stratified fold splitting.

mod folds;
mod format;
mod generate;

pub use folds::{split_folds, FoldPlan};
pub use format::{load_bags, save_bags, Manifest, BAG_MAGIC};
pub use generate::generate_dataset;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator configuration. Positive bags plant `ceil(witness_rate · N)`
/// witness instances shifted by `separation` along a fixed coordinate axis;
/// everything else is background noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub num_bags: usize,
    pub feature_dim: usize,
    /// Inclusive instance-count range.
    pub n_range: (usize, usize),
    pub witness_rate: f64,
    pub class_count: usize,
    /// Absolute mean shift of the witness cluster along its axis.
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for DatasetConfig {
    /// Desk-scale defaults: small enough for CPU minutes, hard enough that
    /// mean pooling dilutes the rare witnesses.
    fn default() -> Self {
        DatasetConfig {
            seed: 7,
            num_bags: 200,
            feature_dim: 64,
            n_range: (50, 200),
            witness_rate: 0.05,
            class_count: 2,
            separation: 2.0,
            noise_std: 0.5,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bags == 0 {
            return Err(Error::Config("num_bags must be >= 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if self.n_range.0 < 1 || self.n_range.0 > self.n_range.1 {
            return Err(Error::Config(format!(
                "invalid instance range {:?}",
                self.n_range
            )));
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return Err(Error::Config(format!(
                "witness_rate must lie in (0, 1], got {}",
                self.witness_rate
            )));
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be >= 2".into()));
        }
        if self.class_count - 1 > self.feature_dim {
            return Err(Error::Config(
                "need one witness axis per positive class: class_count - 1 <= feature_dim".into(),
            ));
        }
        if self.separation < 0.0 {
            return Err(Error::Config("separation must be >= 0".into()));
        }
        if self.noise_std <= 0.0 {
            return Err(Error::Config("noise_std must be > 0".into()));
        }
        Ok(())
    }
}
