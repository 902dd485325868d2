//! Beam search over a label tree and the exhaustive all-labels oracle.
//!
//! Path log-probabilities are accumulated layer by layer in the same order in
//! both code paths, so a beam wide enough to keep every node reproduces the
//! exhaustive scores bit for bit.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::g6;
use crate::linear_ranker::log_node_probability;
use crate::model::LabelTree;
use crate::sparse::{Index, SparseMatrix, SparseVector};

/// Sorted `(label, probability)` pairs for one instance.
pub type Ranking = Vec<(Index, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    pub b: usize,
    pub k: usize,
    pub instances: Vec<Ranking>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensePrediction {
    /// One length-`L` probability vector per instance.
    pub probs: Vec<Vec<f64>>,
}

/// Survivors of every layer, as `(node, log-probability)` sorted best first.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamTrace {
    pub keep: Vec<usize>,
    pub layers: Vec<Vec<(Index, f64)>>,
}

#[inline]
fn by_score(a: &(Index, f64), b: &(Index, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn top(mut cands: Vec<(Index, f64)>, keep: usize) -> Vec<(Index, f64)> {
    if cands.len() > keep {
        if keep == 0 {
            return Vec::new();
        }
        cands.select_nth_unstable_by(keep - 1, by_score);
        cands.truncate(keep);
    }
    cands.sort_unstable_by(by_score);
    cands
}

fn check_dim(model: &LabelTree, dim: usize) -> Result<()> {
    if dim != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            found: dim,
        });
    }
    Ok(())
}

fn beam_core(model: &LabelTree, idx: &[Index], val: &[f64], b: usize, k: usize, trace: Option<&mut BeamTrace>) -> Ranking {
    let d = model.depth();
    let dim = model.n_features();
    let tree = &model.topology;
    let mut active: Vec<(Index, f64)> = vec![(0, 0.0)];
    let mut layers = Vec::new();
    for t in 1..=d {
        let w = model.layer_weights(t);
        let mut cands = Vec::with_capacity(active.len() * tree.branching());
        for &(p, lp) in &active {
            for &c in tree.children(t, p as usize) {
                let node = log_node_probability(w.row(c as usize), idx, val, dim);
                cands.push((c, lp + node));
            }
        }
        let keep = if t < d { b } else { k };
        active = top(cands, keep);
        if trace.is_some() {
            layers.push(active.clone());
        }
    }
    if let Some(tr) = trace {
        tr.keep = (1..=d).map(|t| if t < d { b } else { k }).collect();
        tr.layers = layers;
    }
    active.into_iter().map(|(l, lp)| (l, lp.exp())).collect()
}

pub(crate) fn beam_raw(model: &LabelTree, idx: &[Index], val: &[f64], b: usize, k: usize) -> Ranking {
    beam_core(model, idx, val, b, k, None)
}

/// Top-`k` labels by path probability, keeping `b` nodes per internal layer.
pub fn beam_search(model: &LabelTree, x: &SparseVector, b: usize, k: usize) -> Result<Ranking> {
    check_dim(model, x.dim())?;
    if b == 0 || k == 0 {
        return Err(Error::InvalidArgument("beam width and k must be at least 1".into()));
    }
    Ok(beam_core(model, x.indices(), x.values(), b, k, None))
}

pub fn beam_search_traced(model: &LabelTree, x: &SparseVector, b: usize, k: usize) -> Result<(Ranking, BeamTrace)> {
    check_dim(model, x.dim())?;
    if b == 0 || k == 0 {
        return Err(Error::InvalidArgument("beam width and k must be at least 1".into()));
    }
    let mut trace = BeamTrace {
        keep: vec![],
        layers: vec![],
    };
    let r = beam_core(model, x.indices(), x.values(), b, k, Some(&mut trace));
    Ok((r, trace))
}

/// Beam search over every row of `x`, in parallel.
pub fn beam_search_batch(model: &LabelTree, x: &SparseMatrix, b: usize, k: usize) -> Result<BeamResult> {
    check_dim(model, x.cols())?;
    if b == 0 || k == 0 {
        return Err(Error::InvalidArgument("beam width and k must be at least 1".into()));
    }
    let instances = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let r = x.row(i);
            beam_core(model, r.indices, r.values, b, k, None)
        })
        .collect();
    Ok(BeamResult { b, k, instances })
}

fn exhaustive_core(model: &LabelTree, idx: &[Index], val: &[f64]) -> Vec<Vec<f64>> {
    let dim = model.n_features();
    let tree = &model.topology;
    let root = [0.0];
    let mut layers: Vec<Vec<f64>> = Vec::with_capacity(model.depth());
    for t in 1..=model.depth() {
        let w = model.layer_weights(t);
        let prev = layers.last().map_or(&root[..], |v| v.as_slice());
        let cur: Vec<f64> = (0..tree.layer_size(t))
            .map(|c| prev[tree.parent(t, c)] + log_node_probability(w.row(c), idx, val, dim))
            .collect();
        layers.push(cur);
    }
    layers
}

/// Path log-probabilities of every node at every layer (`layers[t-1]`).
pub fn exhaustive_layers(model: &LabelTree, x: &SparseVector) -> Result<Vec<Vec<f64>>> {
    check_dim(model, x.dim())?;
    Ok(exhaustive_core(model, x.indices(), x.values()))
}

/// Probability of every label with no pruning.
pub fn exhaustive_predict(model: &LabelTree, x: &SparseVector) -> Result<Vec<f64>> {
    let mut layers = exhaustive_layers(model, x)?;
    let leaf = layers.pop().expect("depth ≥ 1");
    Ok(leaf.into_iter().map(f64::exp).collect())
}

pub fn exhaustive_batch(model: &LabelTree, x: &SparseMatrix) -> Result<DensePrediction> {
    check_dim(model, x.cols())?;
    let probs = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let r = x.row(i);
            let mut layers = exhaustive_core(model, r.indices, r.values);
            layers.pop().expect("depth ≥ 1").into_iter().map(f64::exp).collect()
        })
        .collect();
    Ok(DensePrediction { probs })
}

/// Top-`k` of a vector of log-probabilities, same ordering as the beam.
pub fn top_k_log(log_probs: &[f64], k: usize) -> Ranking {
    let cands = log_probs.iter().enumerate().map(|(i, &lp)| (i as Index, lp)).collect();
    top(cands, k).into_iter().map(|(l, lp)| (l, lp.exp())).collect()
}

pub fn exhaustive_top_k(model: &LabelTree, x: &SparseVector, k: usize) -> Result<Ranking> {
    let layers = exhaustive_layers(model, x)?;
    Ok(top_k_log(layers.last().expect("depth ≥ 1"), k))
}

/// Mean gap between the oracle's `i`-th best path probability at layer `t`
/// and the beam's `i`-th survivor, over the `min(keep_t, K_t)` slots.
pub fn regret_at_layer(trace: &BeamTrace, exhaustive: &[Vec<f64>], t: usize) -> Result<f64> {
    if t == 0 || t > exhaustive.len() || t > trace.layers.len() {
        return Err(Error::InvalidArgument(format!("layer {t} not present in traces")));
    }
    let all = &exhaustive[t - 1];
    let kt = trace.keep[t - 1].min(all.len());
    if kt == 0 {
        return Ok(0.0);
    }
    let oracle = top_k_log(all, kt);
    let beam = &trace.layers[t - 1];
    let gap: f64 = oracle
        .iter()
        .enumerate()
        .map(|(i, &(_, po))| po - beam.get(i).map_or(0.0, |&(_, lp)| lp.exp()))
        .sum();
    Ok(gap / kt as f64)
}

/// One line per instance: `label:prob` pairs separated by tabs.
pub fn write_predictions<W: Write>(result: &BeamResult, mut w: W) -> std::io::Result<()> {
    for r in &result.instances {
        let line: Vec<String> = r.iter().map(|(l, p)| format!("{l}:{}", g6(*p))).collect();
        writeln!(w, "{}", line.join("\t"))?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<Ranking>> {
    let mut out = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(no + 1, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        let mut r = Vec::new();
        for tok in line.split('\t').filter(|t| !t.is_empty()) {
            let (l, p) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(no + 1, format!("expected label:prob, got {tok:?}")))?;
            let l: Index = l.parse().map_err(|_| Error::parse(no + 1, format!("bad label {l:?}")))?;
            let p: f64 = p.parse().map_err(|_| Error::parse(no + 1, format!("bad probability {p:?}")))?;
            r.push((l, p));
        }
        out.push(r);
    }
    Ok(out)
}
