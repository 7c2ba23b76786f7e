use super::DatasetConfig;
use crate::error::Result;
use crate::mil::{bag_label_rule, Bag};
use crate::numerics::{real, Matrix, Rng, Scalar};

/// Generate the full dataset; a pure function of the config.
///
/// Bag classes rotate round-robin so every class count stays balanced.
/// Class 0 bags are pure background; class c > 0 bags plant
/// `ceil(witness_rate · N)` witnesses whose mean is shifted by `separation`
/// along coordinate axis c−1, at positions shuffled into the bag.
pub fn generate_dataset<T: Scalar>(cfg: &DatasetConfig) -> Result<Vec<Bag<T>>> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut bags = Vec::with_capacity(cfg.num_bags);
    for index in 0..cfg.num_bags {
        let class = index % cfg.class_count;
        let n = rng.int_range(cfg.n_range.0, cfg.n_range.1);
        let witnesses = if class == 0 {
            0
        } else {
            (cfg.witness_rate * n as f64).ceil() as usize
        };

        let mut slots: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut slots);
        let mut instance_labels = vec![0u8; n];
        for &slot in slots.iter().take(witnesses) {
            instance_labels[slot] = 1;
        }

        let shift = cfg.separation;
        let axis = class.saturating_sub(1);
        let mut data = Vec::with_capacity(n * cfg.feature_dim);
        for labels in &instance_labels {
            for d in 0..cfg.feature_dim {
                let mut v = rng.normal() * cfg.noise_std;
                if *labels == 1 && d == axis {
                    v += shift;
                }
                data.push(real::<T>(v));
            }
        }

        debug_assert_eq!(bag_label_rule(&instance_labels)? > 0, class > 0);
        bags.push(Bag {
            features: Matrix::new(n, cfg.feature_dim, data)?,
            label: class,
            instance_labels: Some(instance_labels),
            id: format!("bag{index:04}"),
        });
    }
    Ok(bags)
}
