//! Cross-validated training: one bag per optimizer step, deterministic under
//! the run seed, folds independent and optionally parallel.

use std::collections::BTreeMap;

use super::metrics::{metric_acc, metric_auc_ovr, metric_macro_f1};
use super::{FoldRecord, MetricSummary, RunRecord, TrainConfig};
use crate::aggregators::AttentionConfig;
use crate::error::{Error, Result};
use crate::mil::{pipeline_forward, pipeline_loss_and_grad, AggregatorVariant, Bag, ModelParams};
use crate::numerics::{Rng, Scalar};
use crate::synthdata::FoldPlan;

/// Metrics plus per-bag outputs of evaluating fixed parameters on a bag set.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub acc: f64,
    pub macro_f1: f64,
    pub auc: f64,
    pub predictions: Vec<usize>,
    pub attention: BTreeMap<String, Vec<f64>>,
}

/// Evaluate fixed parameters over a set of bags.
pub fn evaluate<T: Scalar>(
    bags: &[&Bag<T>],
    variant: AggregatorVariant,
    params: &ModelParams<T>,
    cfg: &AttentionConfig,
) -> Result<EvalReport> {
    if bags.is_empty() {
        return Err(Error::Domain("evaluate: empty bag set".into()));
    }
    let classes = params.classes();
    let mut y_true = Vec::with_capacity(bags.len());
    let mut y_pred = Vec::with_capacity(bags.len());
    let mut scores = Vec::with_capacity(bags.len());
    let mut attention = BTreeMap::new();
    for bag in bags {
        let out = pipeline_forward(bag, variant, params, cfg)?;
        let probs: Vec<f64> = out
            .probabilities
            .iter()
            .map(|p| p.to_f64().unwrap())
            .collect();
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        y_true.push(bag.label);
        y_pred.push(pred);
        scores.push(probs);
        attention.insert(
            bag.id.clone(),
            out.attention.iter().map(|a| a.to_f64().unwrap()).collect(),
        );
    }
    Ok(EvalReport {
        acc: metric_acc(&y_true, &y_pred)?,
        macro_f1: metric_macro_f1(&y_true, &y_pred, classes)?,
        auc: metric_auc_ovr(&y_true, &scores, classes)?,
        predictions: y_pred,
        attention,
    })
}

fn class_count<T: Scalar>(bags: &[Bag<T>]) -> usize {
    bags.iter().map(|b| b.label).max().unwrap_or(0) + 1
}

/// k-fold training per the plan; returns metrics mean ± std across folds.
pub fn train<T: Scalar>(bags: &[Bag<T>], plan: &FoldPlan, cfg: &TrainConfig) -> Result<RunRecord> {
    train_with_models(bags, plan, cfg).map(|(record, _)| record)
}

/// Like [`train`], additionally returning the trained parameters of every
/// fold (in fold order) for checkpointing.
pub fn train_with_models<T: Scalar>(
    bags: &[Bag<T>],
    plan: &FoldPlan,
    cfg: &TrainConfig,
) -> Result<(RunRecord, Vec<ModelParams<T>>)> {
    cfg.validate()?;
    if bags.is_empty() {
        return Err(Error::Domain("train: empty dataset".into()));
    }
    let variant = cfg.resolve_variant()?;
    let feature_dim = bags[0].feature_dim();
    if bags.iter().any(|b| b.feature_dim() != feature_dim) {
        return Err(Error::Config("bags disagree on feature dimension".into()));
    }
    let classes = class_count(bags);
    let acfg = cfg.attention_config(feature_dim);
    acfg.validate()?;

    let fold_ids: Vec<usize> = (0..plan.k).collect();
    let jobs = cfg.jobs.max(1).min(plan.k);
    let outcomes: Vec<(FoldRecord, ModelParams<T>)> = if jobs <= 1 {
        fold_ids
            .iter()
            .map(|&f| train_fold(bags, plan, f, variant, classes, &acfg, cfg))
            .collect::<Result<_>>()?
    } else {
        type FoldSlot<T> = Option<Result<(FoldRecord, ModelParams<T>)>>;
        let mut slots: Vec<FoldSlot<T>> = Vec::new();
        slots.resize_with(plan.k, || None);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in fold_ids.chunks(plan.k.div_ceil(jobs)) {
                let acfg = &acfg;
                handles.push(scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|&f| (f, train_fold(bags, plan, f, variant, classes, acfg, cfg)))
                        .collect::<Vec<_>>()
                }));
            }
            for handle in handles {
                for (f, res) in handle.join().expect("fold thread panicked") {
                    slots[f] = Some(res);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every fold scheduled"))
            .collect::<Result<_>>()?
    };

    let (folds, models): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let mut record = RunRecord {
        config: cfg.clone(),
        variant,
        optimizer: cfg.adam(),
        classes,
        feature_dim,
        folds,
        mean: MetricSummary::default(),
        std: MetricSummary::default(),
    };
    record.summarize();
    Ok((record, models))
}

fn train_fold<T: Scalar>(
    bags: &[Bag<T>],
    plan: &FoldPlan,
    fold: usize,
    variant: AggregatorVariant,
    classes: usize,
    acfg: &AttentionConfig,
    cfg: &TrainConfig,
) -> Result<(FoldRecord, ModelParams<T>)> {
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, bag) in bags.iter().enumerate() {
        match plan.fold_of(&bag.id) {
            Some(f) if f == fold => test_idx.push(i),
            Some(_) => train_idx.push(i),
            None => return Err(Error::Config(format!("bag {} missing from plan", bag.id))),
        }
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Config(format!("fold {fold} has an empty split")));
    }

    let root = Rng::new(cfg.seed).derive(0xF01D_0000 + fold as u64);
    let mut init_rng = root.derive(1);
    let mut params = ModelParams::<T>::init(variant, acfg, classes, &mut init_rng);
    let adam = cfg.adam();

    // optional validation subset carved from the training bags
    let mut val_idx: Vec<usize> = Vec::new();
    let mut fit_idx = train_idx.clone();
    if cfg.early_stop_patience > 0 && train_idx.len() >= 2 * classes {
        let mut shuffled = train_idx.clone();
        root.derive(2).shuffle(&mut shuffled);
        let want = (train_idx.len() / 7).max(classes);
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &shuffled {
            let c = bags[i].label;
            let have = seen.entry(c).or_insert(0);
            if val_idx.len() < want || *have == 0 {
                val_idx.push(i);
                *have += 1;
            }
            if val_idx.len() >= want && seen.len() == classes {
                break;
            }
        }
        fit_idx.retain(|i| !val_idx.contains(i));
    }

    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams<T>)> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order = fit_idx.clone();
        root.derive(1000 + epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        for &i in &order {
            let bag = &bags[i];
            params.zero_grads();
            let loss =
                pipeline_loss_and_grad(&bag.features, bag.label, variant, &mut params, acfg)?;
            let loss = loss.to_f64().unwrap();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at fold {fold}, epoch {epoch}, bag {}",
                    bag.id
                )));
            }
            epoch_loss += loss;
            params.step(variant, &adam)?;
        }
        losses.push(epoch_loss / order.len().max(1) as f64);
        epochs_run = epoch + 1;

        if cfg.early_stop_patience > 0 && !val_idx.is_empty() {
            let val_bags: Vec<&Bag<T>> = val_idx.iter().map(|&i| &bags[i]).collect();
            let report = evaluate(&val_bags, variant, &params, acfg)?;
            let improved = best.as_ref().is_none_or(|(b, _)| report.auc > *b);
            if improved {
                best = Some((report.auc, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }
    if let Some((_, best_params)) = best {
        params = best_params;
    }

    let test_bags: Vec<&Bag<T>> = test_idx.iter().map(|&i| &bags[i]).collect();
    let report = evaluate(&test_bags, variant, &params, acfg)?;
    let record = FoldRecord {
        fold,
        epochs_run,
        losses,
        acc: report.acc,
        macro_f1: report.macro_f1,
        auc: report.auc,
        test_bags: test_bags.iter().map(|b| b.id.clone()).collect(),
        attention: report.attention,
    };
    Ok((record, params))
}
