//! Synthetic trees whose per-instance label probabilities decay
//! geometrically with rank.
//!
//! The tree is a full `B`-ary tree over `L = B^d` labels in natural order.
//! The feature space has one coordinate per tree node, and a query for
//! target label `s` marks the `d` nodes on `s`'s root-to-leaf path. Node `c`
//! at layer `t` (parent `p`, span `B^{d−t}` labels) answers with probability
//! `γ^e · η` where
//!
//! * `e = 0` when `s` lies under `c` (no noise either),
//! * `e = span · (1 + j) + (d − t)` when `s` lies under a sibling of `c`,
//!   with `j` the rank of `c` among its siblings once `s`'s branch is removed,
//! * `e = (c mod B) · span` when `s` lies outside `p`.
//!
//! `η` is uniform noise in `[0.9, 1]` on internal nodes and `[0.01, 1]` on
//! leaves, drawn once per (node, sibling branch). A label's path exponent is
//! then at least its rank under `s`, plus one for each subtree boundary
//! passed. Every weight row holds `B + 1` entries, so per-node cost does not
//! grow with `L`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::label_tree::TreeTopology;
use crate::model::{LabelTree, TrainParams};
use crate::seed::rng_for;
use crate::sparse::{CsrBuilder, Index, SparseMatrix, SparseVector};

const INTERNAL_NOISE_FLOOR: f64 = 0.9;
const LEAF_NOISE_FLOOR: f64 = 0.01;
/// Decision value standing in for a conditional probability of one.
const SURE: f64 = 40.0;

/// Integer `B` with `B^d = L`.
pub fn branching_for(n_labels: usize, depth: usize) -> Result<usize> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let guess = (n_labels as f64).powf(1.0 / depth as f64).round() as usize;
    if guess < 2 || guess.checked_pow(depth as u32) != Some(n_labels) {
        return Err(Error::InvalidArgument(format!(
            "{n_labels} labels is not a perfect {depth}-th power of an integer ≥ 2"
        )));
    }
    Ok(guess)
}

fn logit_from_ln(ln_q: f64) -> f64 {
    ln_q - (-ln_q.exp()).ln_1p()
}

fn layer_offsets(b: usize, depth: usize) -> Vec<usize> {
    let mut off = vec![0; depth + 2];
    for t in 1..=depth {
        off[t + 1] = off[t] + b.pow(t as u32);
    }
    off
}

pub fn synthetic_longtail(n_labels: usize, depth: usize, gamma: f64, seed: u64) -> Result<LabelTree> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("decay {gamma} outside (0, 1)")));
    }
    let b = branching_for(n_labels, depth)?;
    let ln_g = gamma.ln();
    let off = layer_offsets(b, depth);
    let dim = off[depth + 1];
    let mut indexing = Vec::with_capacity(depth);
    let mut weights = Vec::with_capacity(depth);
    let mut idx: Vec<Index> = Vec::with_capacity(b + 1);
    let mut val: Vec<f64> = Vec::with_capacity(b + 1);
    #[allow(clippy::needless_range_loop)]
    for t in 1..=depth {
        let k = b.pow(t as u32);
        let span = b.pow((depth - t) as u32);
        let floor = if t == depth { LEAF_NOISE_FLOOR } else { INTERNAL_NOISE_FLOOR };
        let mut ci = CsrBuilder::with_capacity(k / b, k, k);
        let mut w = CsrBuilder::with_capacity(dim + 1, k, k * (b + 1));
        for c in 0..k {
            let p = c / b;
            ci.push_row(&[p as Index], &[1.0]);
            let jc = c % b;
            let mut rng = rng_for(seed, &[t as u64, c as u64]);
            let e_out = (jc * span) as f64;
            let bias = logit_from_ln(e_out * ln_g + rng.gen_range(floor..=1.0f64).ln());
            idx.clear();
            val.clear();
            for js in 0..b {
                let noise = rng.gen_range(floor..=1.0f64).ln();
                let logit = if js == jc {
                    SURE
                } else {
                    let j = jc - usize::from(jc > js);
                    let e = (span * (1 + j) + (depth - t)) as f64;
                    logit_from_ln(e * ln_g + noise)
                };
                idx.push((off[t] + p * b + js) as Index);
                val.push(logit - bias);
            }
            idx.push(dim as Index);
            val.push(bias);
            w.push_row(&idx, &val);
        }
        indexing.push(ci.finish());
        weights.push(w.finish());
    }
    let topology = TreeTopology::from_indexing(b, indexing)?;
    let params = TrainParams {
        branching: b,
        max_leaf: b,
        seed,
        ..TrainParams::default()
    };
    LabelTree::new(topology, weights, dim, params)
}

/// Path encoding of label `s` in the `synthetic_longtail(L, d, ..)` feature space.
pub fn synthetic_query(n_labels: usize, depth: usize, s: usize) -> Result<SparseVector> {
    let b = branching_for(n_labels, depth)?;
    if s >= n_labels {
        return Err(Error::InvalidArgument(format!("label {s} out of range for {n_labels} labels")));
    }
    let off = layer_offsets(b, depth);
    let idx = (1..=depth)
        .map(|t| (off[t] + s / b.pow((depth - t) as u32)) as Index)
        .collect();
    SparseVector::new(off[depth + 1], idx, vec![1.0; depth])
}

/// `n` path-encoded queries with targets drawn uniformly.
pub fn synthetic_queries(n_labels: usize, depth: usize, n: usize, seed: u64) -> Result<SparseMatrix> {
    let mut rng = rng_for(seed, &[]);
    let rows = (0..n)
        .map(|_| synthetic_query(n_labels, depth, rng.gen_range(0..n_labels)))
        .collect::<Result<Vec<_>>>()?;
    let dim = layer_offsets(branching_for(n_labels, depth)?, depth)[depth + 1];
    SparseMatrix::from_row_vectors(dim, &rows)
}
