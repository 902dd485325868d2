use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::Index;

#[derive(Clone, Debug, PartialEq)]
pub struct RankedPrediction {
    /// Best first, no duplicates.
    pub labels: Vec<Index>,
    /// Sorted ascending.
    pub truth: Vec<Index>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub ks: Vec<usize>,
    /// Percent, macro-averaged over evaluated instances.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub evaluated: usize,
    pub skipped_no_labels: usize,
}

/// P@k and R@k in percent. Instances without true labels are skipped.
pub fn precision_recall_at_k(preds: &[RankedPrediction], ks: &[usize]) -> PrecisionRecall {
    let mut precision = vec![0.0; ks.len()];
    let mut recall = vec![0.0; ks.len()];
    let mut evaluated = 0;
    let mut skipped = 0;
    for p in preds {
        if p.truth.is_empty() {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        for (j, &k) in ks.iter().enumerate() {
            let hits = p
                .labels
                .iter()
                .take(k)
                .filter(|l| p.truth.binary_search(l).is_ok())
                .count() as f64;
            precision[j] += hits / k as f64;
            recall[j] += hits / p.truth.len() as f64;
        }
    }
    if evaluated > 0 {
        let n = evaluated as f64;
        for v in precision.iter_mut().chain(recall.iter_mut()) {
            *v = 100.0 * *v / n;
        }
    }
    PrecisionRecall {
        ks: ks.to_vec(),
        precision,
        recall,
        evaluated,
        skipped_no_labels: skipped,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSample {
    /// Higher means more anomalous or more uncertain.
    pub score: f64,
    pub target: bool,
}

/// Area under the ROC curve with average ranks for ties.
///
/// Ranks are kept doubled so the statistic is an exact ratio of integers,
/// `(2 R⁺ − P(P+1)) / (2 P N)`, the same value pair counting produces.
pub fn auroc(samples: &[DetectionSample]) -> Result<f64> {
    let positives = samples.iter().filter(|s| s.target).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateAuroc { positives, negatives });
    }
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite detection score {}", s.score)));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_unstable_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && samples[order[j]].score == samples[order[i]].score {
            j += 1;
        }
        // ranks i+1 ..= j share the doubled average rank i + 1 + j
        let doubled = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&o| samples[o].target).count() as u128;
        rank_sum2 += doubled * pos_in_group;
        i = j;
    }
    let p = positives as u128;
    let n = negatives as u128;
    let num = rank_sum2 - p * (p + 1);
    Ok(num as f64 / (2 * p * n) as f64)
}

/// `O(P·N)` reference: `(wins + ½ ties) / (P·N)`.
pub fn auroc_pairwise(samples: &[DetectionSample]) -> Result<f64> {
    let pos: Vec<f64> = samples.iter().filter(|s| s.target).map(|s| s.score).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| !s.target).map(|s| s.score).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateAuroc {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let mut twice: u128 = 0;
    for &a in &pos {
        for &b in &neg {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    Ok(twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("need at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept, r2 })
}
