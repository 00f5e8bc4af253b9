//! Classification metrics over binary labels and real decision values.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub auroc: f64,
    pub macro_f1: f64,
    pub n: usize,
}

pub fn accuracy(labels: &[u8], predicted: &[u8]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    let hits = labels.iter().zip(predicted).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

fn f1_for(class: u8, labels: &[u8], predicted: &[u8]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&y, &p) in labels.iter().zip(predicted) {
        match (y == class, p == class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 || tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of the two per-class F1 scores. A class with no true
/// positives scores 0.
pub fn macro_f1(labels: &[u8], predicted: &[u8]) -> f64 {
    (f1_for(0, labels, predicted) + f1_for(1, labels, predicted)) / 2.0
}

/// Mann-Whitney AUROC with midranks for tied scores. NaN when only one class
/// is present.
pub fn auroc(labels: &[u8], scores: &[f64]) -> f64 {
    let n = labels.len();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&i| labels[i] == 1).map(|i| ranks[i]).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    u / (pos as f64 * neg as f64)
}

pub fn compute(labels: &[u8], predicted: &[u8], scores: &[f64]) -> Metrics {
    Metrics {
        acc: accuracy(labels, predicted),
        auroc: auroc(labels, scores),
        macro_f1: macro_f1(labels, predicted),
        n: labels.len(),
    }
}
