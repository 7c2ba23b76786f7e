//! Attention-score export for visualization.

use std::fs;
use std::path::Path;

use crate::aggregators::AttentionConfig;
use crate::error::Result;
use crate::mil::{pipeline_forward, AggregatorVariant, Bag, ModelParams};
use crate::numerics::Scalar;

/// Write one CSV row per instance: index, attention score, and the instance
/// label when known.
pub fn export_attention<T: Scalar>(
    params: &ModelParams<T>,
    variant: AggregatorVariant,
    cfg: &AttentionConfig,
    bag: &Bag<T>,
    path: &Path,
) -> Result<()> {
    let out = pipeline_forward(bag, variant, params, cfg)?;
    let mut csv = String::from("instance_index,attention_score,instance_label\n");
    for (i, score) in out.attention.iter().enumerate() {
        let label = bag
            .instance_labels
            .as_ref()
            .map(|l| l[i].to_string())
            .unwrap_or_default();
        csv.push_str(&format!("{},{:.8},{}\n", i, score.to_f64().unwrap(), label));
    }
    fs::write(path, csv)?;
    Ok(())
}
