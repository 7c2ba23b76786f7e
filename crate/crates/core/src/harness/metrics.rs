//! Classification metrics: accuracy, macro-F1, and one-vs-rest AUC via the
//! rank statistic with midrank tie handling.

use crate::error::{Error, Result};

/// Fraction of exact label matches.
pub fn metric_acc(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Macro-averaged F1 over all classes present in `y_true` or `y_pred`;
/// classes with no true and no predicted members score 0.
pub fn metric_macro_f1(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    if classes == 0 {
        return Err(Error::Domain("macro_f1: class count must be >= 1".into()));
    }
    let mut total = 0.0;
    for c in 0..classes {
        let tp = y_true
            .iter()
            .zip(y_pred)
            .filter(|(&t, &p)| t == c && p == c)
            .count() as f64;
        let fp = y_true
            .iter()
            .zip(y_pred)
            .filter(|(&t, &p)| t != c && p == c)
            .count() as f64;
        let fn_ = y_true
            .iter()
            .zip(y_pred)
            .filter(|(&t, &p)| t == c && p != c)
            .count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        total += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    Ok(total / classes as f64)
}

/// Binary AUC from scores for the positive class, computed from midranks
/// (equivalent to the pairwise comparison count with ties at half weight).
pub fn binary_auc(y_true: &[usize], scores: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), scores.len())?;
    let pos = y_true.iter().filter(|&&y| y == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain(
            "AUC undefined: y_true contains a single class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = y_true
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y == 1)
        .map(|(_, &r)| r)
        .sum();
    let p = pos as f64;
    let n = neg as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One-vs-rest AUC: per class, that class against the rest using its score
/// column, averaged over classes.
pub fn metric_auc_ovr(y_true: &[usize], scores: &[Vec<f64>], classes: usize) -> Result<f64> {
    check_lengths(y_true.len(), scores.len())?;
    if classes < 2 {
        return Err(Error::Domain("AUC needs at least 2 classes".into()));
    }
    let mut total = 0.0;
    for c in 0..classes {
        let binary: Vec<usize> = y_true.iter().map(|&y| usize::from(y == c)).collect();
        let class_scores: Vec<f64> = scores
            .iter()
            .map(|row| {
                row.get(c)
                    .copied()
                    .ok_or_else(|| Error::Domain(format!("score row shorter than class index {c}")))
            })
            .collect::<Result<_>>()?;
        total += binary_auc(&binary, &class_scores)?;
    }
    Ok(total / classes as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Domain("metric on empty input".into()));
    }
    if a != b {
        return Err(Error::Domain(format!(
            "metric inputs have mismatched lengths {a} and {b}"
        )));
    }
    Ok(())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation across folds.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}
