//! Binary classification metrics.
//!
//! Labels are `0`/`1`; a prediction is positive when `score >= threshold`.
//! AUROC is the tie-corrected Mann–Whitney statistic, AUPRC the
//! average-precision step sum with tied scores forming one threshold block.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub max_f1: f64,
}

/// All four metrics, accuracy at threshold 0.5.
pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<MetricSet> {
    Ok(MetricSet {
        accuracy: accuracy(scores, labels, 0.5)?,
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        max_f1: max_f1(scores, labels)?,
    })
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::data("no scored examples"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            other => return Err(Error::data(format!("label {other} is not 0/1"))),
        }
    }
    Ok((pos, labels.len() - pos))
}

pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    let hits = scores.iter().zip(labels).filter(|&(&s, &l)| (s >= threshold) == (l == 1)).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Distinct-score blocks in descending order: `(positives, negatives)` per block.
fn descending_blocks(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for i in order {
        let s = scores[i];
        if last != Some(s) {
            blocks.push((0, 0));
            last = Some(s);
        }
        let b = blocks.last_mut().unwrap();
        if labels[i] == 1 {
            b.0 += 1;
        } else {
            b.1 += 1;
        }
    }
    blocks
}

pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (p, n) = check(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(Error::data("AUROC needs both classes"));
    }
    // Walking blocks from the top: every negative below a positive is
    // concordant, negatives in the same block count half.
    let mut twice_concordant: u128 = 0;
    let mut negatives_below = n as u128;
    for (bp, bn) in descending_blocks(scores, labels) {
        negatives_below -= bn as u128;
        twice_concordant += bp as u128 * (2 * negatives_below + bn as u128);
    }
    Ok(twice_concordant as f64 / (2.0 * p as f64 * n as f64))
}

pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (p, _) = check(scores, labels)?;
    if p == 0 {
        return Err(Error::data("AUPRC needs at least one positive"));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (bp, bn) in descending_blocks(scores, labels) {
        tp += bp;
        fp += bn;
        let recall = tp as f64 / p as f64;
        area += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
    }
    Ok(area)
}

pub fn max_f1(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (p, _) = check(scores, labels)?;
    if p == 0 {
        return Err(Error::data("max F1 needs at least one positive"));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best: f64 = 0.0;
    for (bp, bn) in descending_blocks(scores, labels) {
        tp += bp;
        fp += bn;
        best = best.max(f1(tp, fp, p as u64));
    }
    Ok(best)
}

fn f1(tp: u64, fp: u64, positives: u64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / positives as f64;
    2.0 * precision * recall / (precision + recall)
}
