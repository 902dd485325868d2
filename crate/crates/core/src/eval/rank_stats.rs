use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{linear_fit, LinearFit};
use crate::error::Result;
use crate::format::g6;
use crate::inference::Ranking;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankStat {
    /// 1-based.
    pub rank: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and (population) standard deviation of the `i`-th largest
/// probability across instances, for `i = 1..=max_rank`. Instances with
/// fewer than `i` probabilities contribute zero at rank `i`.
pub fn rank_statistics(probs: &[Vec<f64>], max_rank: usize) -> Vec<RankStat> {
    let n = probs.len().max(1) as f64;
    let mut sum = vec![0.0; max_rank];
    let mut sq = vec![0.0; max_rank];
    for row in probs {
        let mut sorted = row.clone();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        for (i, &p) in sorted.iter().take(max_rank).enumerate() {
            sum[i] += p;
            sq[i] += p * p;
        }
    }
    (0..max_rank)
        .map(|i| {
            let mean = sum[i] / n;
            let var = (sq[i] / n - mean * mean).max(0.0);
            RankStat {
                rank: i + 1,
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

pub fn rank_statistics_beam(results: &[Ranking], max_rank: usize) -> Vec<RankStat> {
    let probs: Vec<Vec<f64>> = results.iter().map(|r| r.iter().map(|p| p.1).collect()).collect();
    rank_statistics(&probs, max_rank)
}

/// Fits `ln mean_i = ln c + i ln γ` over ranks with positive means.
pub fn geometric_fit(stats: &[RankStat]) -> Result<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = stats
        .iter()
        .filter(|s| s.mean > 0.0)
        .map(|s| (s.rank as f64, s.mean.ln()))
        .unzip();
    linear_fit(&x, &y)
}

pub fn write_rank_csv<W: Write>(stats: &[RankStat], mut w: W) -> std::io::Result<()> {
    writeln!(w, "rank,mean,std")?;
    for s in stats {
        writeln!(w, "{},{},{}", s.rank, g6(s.mean), g6(s.std))?;
    }
    Ok(())
}
