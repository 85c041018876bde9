use crate::error::{Error, Result};

/// Unweighted mean of per-class recall over classes `0..n_classes`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if labels.is_empty() || n_classes == 0 {
        return Err(Error::contract("balanced accuracy needs a non-empty label set"));
    }
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= n_classes {
            return Err(Error::contract(format!("label {y} outside {n_classes} classes")));
        }
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    if let Some(c) = totals.iter().position(|&t| t == 0) {
        return Err(Error::contract(format!("class {c} is absent from the labels")));
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| h as f64 / t as f64)
        .sum::<f64>()
        / n_classes as f64)
}

/// Average precision: sum of precision at each positive, over the number of
/// positives, in descending score order with ties kept in input order.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::contract("average precision needs both classes present"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score in average precision".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}
