//! External clustering metrics: pair-counting confusion, Fowlkes–Mallows
//! (global and per item), normalized mutual information and purity.
//!
//! Pair counts come from the contingency table between predicted clusters
//! and truth classes, so everything here is `O(n + k·k_truth)`.
//!
//! Labels may be arbitrary integers; only the partitions they induce matter.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("prediction has {pred} labels but truth has {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least {min} items, got {n}")]
    TooFewItems { n: usize, min: usize },
    #[error("item {item} out of range for {n} items")]
    IndexOutOfRange { item: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "FM")]
    Fm,
    #[serde(rename = "NMI")]
    Nmi,
    #[serde(rename = "PUR")]
    Pur,
}

impl MetricId {
    pub const ALL: [MetricId; 3] = [MetricId::Fm, MetricId::Nmi, MetricId::Pur];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Fm => "FM",
            MetricId::Nmi => "NMI",
            MetricId::Pur => "PUR",
        }
    }
}

/// Pair counts over all unordered pairs, plus the per-item counts of pairs
/// containing each item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub per_item_tp: Vec<u64>,
    pub per_item_fp: Vec<u64>,
    pub per_item_fn: Vec<u64>,
}

/// Maps labels to `0..m` in order of first appearance.
fn dense(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

struct Contingency {
    pred: Vec<usize>,
    truth: Vec<usize>,
    /// `table[p * n_truth + t]`
    table: Vec<u64>,
    pred_sizes: Vec<u64>,
    truth_sizes: Vec<u64>,
    n_truth: usize,
}

impl Contingency {
    fn new(pred: &[usize], truth: &[usize]) -> Result<Self, MetricError> {
        if pred.len() != truth.len() {
            return Err(MetricError::LengthMismatch {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        let (pred, n_pred) = dense(pred);
        let (truth, n_truth) = dense(truth);
        let mut table = vec![0u64; n_pred * n_truth];
        let mut pred_sizes = vec![0u64; n_pred];
        let mut truth_sizes = vec![0u64; n_truth];
        for (&p, &t) in pred.iter().zip(&truth) {
            table[p * n_truth + t] += 1;
            pred_sizes[p] += 1;
            truth_sizes[t] += 1;
        }
        Ok(Self {
            pred,
            truth,
            table,
            pred_sizes,
            truth_sizes,
            n_truth,
        })
    }

    fn cell(&self, p: usize, t: usize) -> u64 {
        self.table[p * self.n_truth + t]
    }
}

fn choose2(x: u64) -> u64 {
    x * x.saturating_sub(1) / 2
}

/// Counts true/false positive/negative pairs between `pred` and `truth`.
pub fn pair_confusion(pred: &[usize], truth: &[usize]) -> Result<PairConfusion, MetricError> {
    let ct = Contingency::new(pred, truth)?;
    let n = pred.len() as u64;
    if n < 2 {
        return Err(MetricError::TooFewItems {
            n: n as usize,
            min: 2,
        });
    }
    let tp: u64 = ct.table.iter().map(|&c| choose2(c)).sum();
    let same_pred: u64 = ct.pred_sizes.iter().map(|&c| choose2(c)).sum();
    let same_truth: u64 = ct.truth_sizes.iter().map(|&c| choose2(c)).sum();
    let fp = same_pred - tp;
    let fn_ = same_truth - tp;
    let tn = choose2(n) - tp - fp - fn_;

    let mut per_item_tp = Vec::with_capacity(pred.len());
    let mut per_item_fp = Vec::with_capacity(pred.len());
    let mut per_item_fn = Vec::with_capacity(pred.len());
    for (&p, &t) in ct.pred.iter().zip(&ct.truth) {
        let both = ct.cell(p, t);
        per_item_tp.push(both - 1);
        per_item_fp.push(ct.pred_sizes[p] - both);
        per_item_fn.push(ct.truth_sizes[t] - both);
    }
    Ok(PairConfusion {
        tp,
        fp,
        fn_,
        tn,
        per_item_tp,
        per_item_fp,
        per_item_fn,
    })
}

fn fm_ratio(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp + fp == 0 || tp + fn_ == 0 {
        return 0.0;
    }
    tp as f64 / (((tp + fp) as f64) * ((tp + fn_) as f64)).sqrt()
}

/// Fowlkes–Mallows index `TP / sqrt((TP+FP)(TP+FN))`; 0 when either factor is 0.
pub fn fm_global(conf: &PairConfusion) -> f64 {
    fm_ratio(conf.tp, conf.fp, conf.fn_)
}

/// Fowlkes–Mallows index restricted to the pairs that contain `item`.
pub fn fm_individual(conf: &PairConfusion, item: usize) -> Result<f64, MetricError> {
    let n = conf.per_item_tp.len();
    if item >= n {
        return Err(MetricError::IndexOutOfRange { item, n });
    }
    Ok(fm_ratio(
        conf.per_item_tp[item],
        conf.per_item_fp[item],
        conf.per_item_fn[item],
    ))
}

/// Per-item Fowlkes–Mallows for every item at once.
pub fn fm_individual_all(conf: &PairConfusion) -> Vec<f64> {
    (0..conf.per_item_tp.len())
        .map(|i| {
            fm_ratio(
                conf.per_item_tp[i],
                conf.per_item_fp[i],
                conf.per_item_fn[i],
            )
        })
        .collect()
}

fn entropy(sizes: &[u64], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the geometric mean of the two entropies.
///
/// Both partitions trivial gives 1; exactly one trivial gives 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    let ct = Contingency::new(pred, truth)?;
    if pred.is_empty() {
        return Err(MetricError::TooFewItems { n: 0, min: 1 });
    }
    let n = pred.len() as f64;
    let hp = entropy(&ct.pred_sizes, n);
    let ht = entropy(&ct.truth_sizes, n);
    // Entropy of a single block is an empty sum, so exactly 0.0.
    match (hp == 0.0, ht == 0.0) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut mi = 0.0;
    for (p, &ps) in ct.pred_sizes.iter().enumerate() {
        for (t, &ts) in ct.truth_sizes.iter().enumerate() {
            let c = ct.cell(p, t);
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (ps as f64 * ts as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of items that belong to the majority truth class of their cluster.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    let ct = Contingency::new(pred, truth)?;
    if pred.is_empty() {
        return Err(MetricError::TooFewItems { n: 0, min: 1 });
    }
    let hits: u64 = (0..ct.pred_sizes.len())
        .map(|p| (0..ct.n_truth).map(|t| ct.cell(p, t)).max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / pred.len() as f64)
}

/// Scores `pred` against `truth` under one metric.
pub fn score(metric: MetricId, pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    match metric {
        MetricId::Fm => Ok(fm_global(&pair_confusion(pred, truth)?)),
        MetricId::Nmi => nmi(pred, truth),
        MetricId::Pur => purity(pred, truth),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const TRUTH: [usize; 4] = [0, 0, 1, 1];
    const PRED: [usize; 4] = [0, 0, 0, 1];

    #[test]
    fn hand_case_counts() {
        let c = pair_confusion(&PRED, &TRUTH).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 2, 1, 2));
        assert_eq!(c.per_item_tp, vec![1, 1, 0, 0]);
        assert_eq!(c.per_item_fp, vec![1, 1, 2, 0]);
        assert_eq!(c.per_item_fn, vec![0, 0, 1, 1]);
    }

    #[test]
    fn hand_case_scores() {
        let c = pair_confusion(&PRED, &TRUTH).unwrap();
        assert_abs_diff_eq!(fm_global(&c), 1.0 / 6f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            fm_individual(&c, 0).unwrap(),
            1.0 / 2f64.sqrt(),
            epsilon = 1e-12
        );
        assert_eq!(fm_individual(&c, 3).unwrap(), 0.0);
        assert_abs_diff_eq!(
            nmi(&PRED, &TRUTH).unwrap(),
            0.345_592_029_944_211_3,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(purity(&PRED, &TRUTH).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn identical_partitions() {
        let t = [3, 3, 9, 9, 9, 1];
        let p = [0, 0, 1, 1, 1, 2];
        let c = pair_confusion(&p, &t).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(fm_global(&c), 1.0);
        assert_eq!(fm_individual(&c, 0).unwrap(), 1.0);
        assert_abs_diff_eq!(nmi(&p, &t).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(purity(&p, &t).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_cases() {
        let singletons = [0, 1, 2, 3];
        let c = pair_confusion(&singletons, &TRUTH).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!(fm_global(&c), 0.0);
        assert_eq!(nmi(&[0, 0, 0, 0], &TRUTH).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0], &[1, 1]).unwrap(), 1.0);
        assert_eq!(purity(&[0, 0, 0, 0], &TRUTH).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(
            pair_confusion(&[0, 1], &[0]),
            Err(MetricError::LengthMismatch { pred: 2, truth: 1 })
        );
        assert_eq!(
            pair_confusion(&[0], &[0]),
            Err(MetricError::TooFewItems { n: 1, min: 2 })
        );
        let c = pair_confusion(&PRED, &TRUTH).unwrap();
        assert_eq!(
            fm_individual(&c, 4),
            Err(MetricError::IndexOutOfRange { item: 4, n: 4 })
        );
        assert!(nmi(&[0], &[0, 1]).is_err());
        assert!(purity(&[], &[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn relabeling_invariance(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 2..20),
            shift in 1usize..50,
        ) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let pred2: Vec<usize> = pred.iter().map(|&l| (3 - l) * shift + 7).collect();
            let truth2: Vec<usize> = truth.iter().map(|&l| l * 13 + shift).collect();
            for m in MetricId::ALL {
                let a = score(m, &pred, &truth).unwrap();
                let b = score(m, &pred2, &truth2).unwrap();
                proptest::prop_assert!((a - b).abs() < 1e-12);
                proptest::prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
