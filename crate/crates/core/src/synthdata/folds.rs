use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mil::Bag;
use crate::numerics::{Rng, Scalar};

/// Deterministic k-fold partition of bag ids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// bag id → fold index holding it as test data.
    pub assignments: BTreeMap<String, usize>,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }
}

/// Shuffle ids (within each class when stratified) and deal them round-robin
/// into `k` folds.
pub fn split_folds<T: Scalar>(
    bags: &[Bag<T>],
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::Config("fold count must be >= 1".into()));
    }
    if k > bags.len() {
        return Err(Error::Config(format!(
            "fold count {k} exceeds bag count {}",
            bags.len()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut assignments = BTreeMap::new();
    if stratified {
        let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for bag in bags {
            by_class.entry(bag.label).or_default().push(&bag.id);
        }
        let mut next_fold = 0usize;
        for ids in by_class.values_mut() {
            rng.shuffle(ids);
            for id in ids.iter() {
                assignments.insert((*id).to_string(), next_fold % k);
                next_fold += 1;
            }
        }
    } else {
        let mut ids: Vec<&str> = bags.iter().map(|b| b.id.as_str()).collect();
        rng.shuffle(&mut ids);
        for (i, id) in ids.iter().enumerate() {
            assignments.insert((*id).to_string(), i % k);
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified,
    })
}
