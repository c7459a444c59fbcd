use crate::error::{Error, Result};

/// Fraction of rows whose argmax score equals the target class.
pub fn accuracy(scores: &[f64], n_classes: usize, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = targets
        .iter()
        .enumerate()
        .filter(|&(i, &t)| {
            let row = &scores[i * n_classes..(i + 1) * n_classes];
            argmax(row) == t
        })
        .count();
    hits as f64 / targets.len() as f64
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Average precision of one ranking: the sum over distinct score thresholds
/// (descending) of recall increase times precision. Tied scores form one
/// threshold. `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let mut group_tp = 0;
        while i < idx.len() && scores[idx[i]] == s {
            group_tp += labels[idx[i]] as usize;
            seen += 1;
            i += 1;
        }
        tp += group_tp;
        if group_tp > 0 {
            ap += (group_tp as f64 / total_pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Some(ap)
}

/// ROC AUC via the Mann-Whitney statistic with average ranks for ties.
/// `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * idx[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

fn column(data: &[f64], n_classes: usize, c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(n_classes).copied().collect()
}

fn check(scores: &[f64], labels: &[bool], n_classes: usize) -> Result<usize> {
    if n_classes == 0 || scores.len() != labels.len() || scores.len() % n_classes != 0 {
        return Err(Error::contract(format!(
            "scores ({}) and labels ({}) must both be [N, {n_classes}]",
            scores.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::UndefinedMetric("label matrix has no positives".into()));
    }
    Ok(scores.len() / n_classes)
}

/// Macro-averaged per-class AP over `classes`, skipping classes without
/// positives.
pub fn subset_map(scores: &[f64], labels: &[bool], n_classes: usize, classes: &[usize]) -> Result<f64> {
    check(scores, labels, n_classes)?;
    let labels_f: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
    let aps: Vec<f64> = classes
        .iter()
        .filter_map(|&c| {
            let l: Vec<bool> = column(&labels_f, n_classes, c).iter().map(|&v| v > 0.5).collect();
            average_precision(&column(scores, n_classes, c), &l)
        })
        .collect();
    if aps.is_empty() {
        return Err(Error::UndefinedMetric("no class in the subset has a positive".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Macro mAP over classes with at least one positive, and macro ROC AUC over
/// classes with both positives and negatives. Row-major `[N, C]` inputs.
pub fn map_auc(scores: &[f64], labels: &[bool], n_classes: usize) -> Result<(f64, f64)> {
    check(scores, labels, n_classes)?;
    let all: Vec<usize> = (0..n_classes).collect();
    let map = subset_map(scores, labels, n_classes, &all)?;
    let labels_f: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
    let aucs: Vec<f64> = all
        .iter()
        .filter_map(|&c| {
            let l: Vec<bool> = column(&labels_f, n_classes, c).iter().map(|&v| v > 0.5).collect();
            roc_auc(&column(scores, n_classes, c), &l)
        })
        .collect();
    if aucs.is_empty() {
        return Err(Error::UndefinedMetric("AUC needs a class with positives and negatives".into()));
    }
    Ok((map, aucs.iter().sum::<f64>() / aucs.len() as f64))
}
