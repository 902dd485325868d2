use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::synthetic::{synthetic_longtail, synthetic_queries};
use crate::ensemble::EnsembleModel;
use crate::error::Result;
use crate::inference::{beam_search, exhaustive_predict};
use crate::sparse::SparseMatrix;
use crate::uncertainty::{approximate_uncertainty, exact_uncertainty, EntropyKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub naive_seconds: f64,
    pub beam_seconds: f64,
    pub speedup: f64,
    /// Largest instance-level TU gap between the two pipelines.
    pub max_instance_tu_diff: f64,
}

/// Times exact and beam uncertainty end to end on the calling thread.
pub fn timing_comparison(ens: &EnsembleModel, x: &SparseMatrix, b: usize, k: usize, delta: f64) -> Result<Timing> {
    let kind = EntropyKind::Binary;
    let rows: Vec<_> = (0..x.rows()).map(|i| x.row_vector(i)).collect();
    let start = Instant::now();
    let exact = rows
        .iter()
        .map(|r| exact_uncertainty(ens, r, kind))
        .collect::<Result<Vec<_>>>()?;
    let naive_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let approx = rows
        .iter()
        .map(|r| approximate_uncertainty(ens, r, b, k, delta, kind))
        .collect::<Result<Vec<_>>>()?;
    let beam_seconds = start.elapsed().as_secs_f64();
    let max_instance_tu_diff = exact
        .iter()
        .zip(&approx)
        .map(|(e, a)| (e.total.tu - a.total.tu).abs())
        .fold(0.0, f64::max);
    Ok(Timing {
        naive_seconds,
        beam_seconds,
        speedup: naive_seconds / beam_seconds.max(1e-12),
        max_instance_tu_diff,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_labels: usize,
    pub depth: usize,
    pub naive_seconds: f64,
    pub beam_seconds: f64,
}

/// Prediction time of the exhaustive and beam paths on synthetic trees, on
/// the calling thread; each time is the minimum over `reps` passes.
pub fn scaling_sweep(
    sizes: &[(usize, usize)],
    gamma: f64,
    b: usize,
    k: usize,
    n_queries: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(sizes.len());
    for &(l, d) in sizes {
        let model = synthetic_longtail(l, d, gamma, seed)?;
        let q = synthetic_queries(l, d, n_queries, seed ^ 0x5eed)?;
        let rows: Vec<_> = (0..q.rows()).map(|i| q.row_vector(i)).collect();
        let mut naive = f64::INFINITY;
        let mut beam = f64::INFINITY;
        for _ in 0..reps.max(1) {
            let start = Instant::now();
            for r in &rows {
                std::hint::black_box(exhaustive_predict(&model, r)?);
            }
            naive = naive.min(start.elapsed().as_secs_f64());
            let start = Instant::now();
            for r in &rows {
                std::hint::black_box(beam_search(&model, r, b, k)?);
            }
            beam = beam.min(start.elapsed().as_secs_f64());
        }
        log::info!("L={l} d={d}: naive {naive:.4}s, beam {beam:.4}s");
        out.push(SweepPoint {
            n_labels: l,
            depth: d,
            naive_seconds: naive,
            beam_seconds: beam,
        });
    }
    Ok(out)
}
