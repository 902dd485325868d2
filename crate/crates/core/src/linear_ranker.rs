//! Per-node binary rankers.
//!
//! Every node at layer `t` gets an L2-regularized logistic classifier trained
//! on the instances positive for its parent (teacher forcing). At the leaf
//! layer the training set can be widened with mined hard negatives.
//! Weight rows have dimension `d + 1`; index `d` holds the bias.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_tree::TreeTopology;
use crate::seed::rng_for;
use crate::solver::{solve, Problem, SolverParams};
use crate::sparse::{sparse_dot, CsrBuilder, Index, RowView, SparseMatrix};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub layer: usize,
    pub matrix: SparseMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegative {
    pub label: Index,
    /// Boosting round that mined this negative.
    pub source: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum NegativeSamplingPlan {
    #[default]
    TeacherForcing,
    /// One list per training instance.
    HardAugmented { hard_negatives: Vec<Vec<HardNegative>> },
}

impl NegativeSamplingPlan {
    /// Rejects plans that would use an instance's own label as a negative.
    pub fn validate(&self, labels: &SparseMatrix) -> Result<()> {
        let NegativeSamplingPlan::HardAugmented { hard_negatives } = self else {
            return Ok(());
        };
        if hard_negatives.len() != labels.rows() {
            return Err(Error::DimensionMismatch {
                expected: labels.rows(),
                found: hard_negatives.len(),
            });
        }
        for (i, list) in hard_negatives.iter().enumerate() {
            let truth = labels.row(i).indices;
            if let Some(h) = list.iter().find(|h| truth.binary_search(&h.label).is_ok()) {
                return Err(Error::Invariant(format!(
                    "hard negative {} is a true label of instance {i}",
                    h.label
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerParams {
    pub solver: SolverParams,
    pub prune_threshold: f64,
}

impl Default for RankerParams {
    fn default() -> Self {
        Self {
            solver: SolverParams::default(),
            prune_threshold: 1e-3,
        }
    }
}

/// Binary `n × K_t` matrix: instance `i` is positive for node `c` iff one of
/// its labels descends from `c`. Layer 0 is the root, positive for everyone.
pub fn induce_layer_targets(labels: &SparseMatrix, tree: &TreeTopology, t: usize) -> Result<SparseMatrix> {
    let d = tree.depth();
    if t > d {
        return Err(Error::InvalidArgument(format!("layer {t} outside 0..={d}")));
    }
    if labels.cols() != tree.n_labels() {
        return Err(Error::DimensionMismatch {
            expected: tree.n_labels(),
            found: labels.cols(),
        });
    }
    let n = labels.rows();
    if t == 0 {
        let mut b = CsrBuilder::with_capacity(1, n, n);
        for _ in 0..n {
            b.push_row(&[0], &[1.0]);
        }
        return Ok(b.finish());
    }
    let ancestor: Vec<Index> = (0..tree.n_labels())
        .map(|l| {
            let mut node = l;
            for s in (t + 1..=d).rev() {
                node = tree.parent(s, node);
            }
            node as Index
        })
        .collect();
    let mut b = CsrBuilder::with_capacity(tree.layer_size(t), n, labels.nnz());
    let mut row = Vec::new();
    for i in 0..n {
        row.clear();
        row.extend(labels.row(i).indices.iter().map(|&l| ancestor[l as usize]));
        row.sort_unstable();
        row.dedup();
        b.push_row(&row, &vec![1.0; row.len()]);
    }
    Ok(b.finish())
}

/// Per-node training sets of one layer.
pub struct NodeSets {
    positives: SparseMatrix,
    parent_members: SparseMatrix,
    hard: Option<SparseMatrix>,
    parents: Vec<usize>,
}

impl NodeSets {
    pub fn new(
        tree: &TreeTopology,
        t: usize,
        targets: &SparseMatrix,
        parent_targets: &SparseMatrix,
        plan: &NegativeSamplingPlan,
    ) -> Result<Self> {
        if targets.cols() != tree.layer_size(t) || parent_targets.cols() != tree.layer_size(t - 1) {
            return Err(Error::DimensionMismatch {
                expected: tree.layer_size(t),
                found: targets.cols(),
            });
        }
        if targets.rows() != parent_targets.rows() {
            return Err(Error::DimensionMismatch {
                expected: targets.rows(),
                found: parent_targets.rows(),
            });
        }
        let hard = match plan {
            NegativeSamplingPlan::HardAugmented { hard_negatives } if t == tree.depth() => {
                if hard_negatives.len() != targets.rows() {
                    return Err(Error::DimensionMismatch {
                        expected: targets.rows(),
                        found: hard_negatives.len(),
                    });
                }
                let mut b = CsrBuilder::with_capacity(tree.n_labels(), hard_negatives.len(), 0);
                let mut row = Vec::new();
                for list in hard_negatives {
                    row.clear();
                    row.extend(list.iter().map(|h| h.label));
                    row.sort_unstable();
                    row.dedup();
                    b.push_row(&row, &vec![1.0; row.len()]);
                }
                Some(b.finish().transpose())
            }
            _ => None,
        };
        Ok(Self {
            positives: targets.transpose(),
            parent_members: parent_targets.transpose(),
            hard,
            parents: (0..tree.layer_size(t)).map(|c| tree.parent(t, c)).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.parents.len()
    }

    /// Sorted instance ids and their ±1 labels for node `c`.
    pub fn get(&self, c: usize) -> (Vec<Index>, Vec<bool>) {
        let mut members: Vec<Index> = self.parent_members.row(self.parents[c]).indices.to_vec();
        if let Some(h) = &self.hard {
            members.extend_from_slice(h.row(c).indices);
            members.sort_unstable();
            members.dedup();
        }
        let pos = self.positives.row(c).indices;
        let labels = members.iter().map(|i| pos.binary_search(i).is_ok()).collect();
        (members, labels)
    }
}

/// Fits one node; returns its weight row over `d + 1` columns (unpruned).
fn fit_node(
    features: &SparseMatrix,
    instances: &[Index],
    positive: &[bool],
    params: &SolverParams,
    seed: u64,
    local_of: &mut [u32],
) -> (Vec<Index>, Vec<f64>) {
    if instances.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let d = features.cols();
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut rng_for(seed, &[]));

    let mut global: Vec<Index> = Vec::new();
    let mut offsets = Vec::with_capacity(order.len() + 1);
    offsets.push(0);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut y = Vec::with_capacity(order.len());
    let bias_slot = d;
    for &o in &order {
        let row = features.row(instances[o] as usize);
        for (j, v) in row.iter() {
            let slot = &mut local_of[j as usize];
            if *slot == u32::MAX {
                *slot = global.len() as u32;
                global.push(j);
            }
            indices.push(*slot);
            values.push(v);
        }
        if local_of[bias_slot] == u32::MAX {
            local_of[bias_slot] = global.len() as u32;
            global.push(d as Index);
        }
        indices.push(local_of[bias_slot]);
        values.push(1.0);
        offsets.push(indices.len());
        y.push(if positive[o] { 1.0 } else { -1.0 });
    }
    let problem = Problem {
        dim: global.len(),
        offsets,
        indices,
        values,
        y,
    };
    let outcome = solve(&problem, params);
    if !outcome.converged {
        log::debug!("node solver stopped after {} iterations", outcome.iterations);
    }
    let mut pairs: Vec<(Index, f64)> = global.iter().copied().zip(outcome.weights).collect();
    for &g in &global {
        local_of[g as usize] = u32::MAX;
    }
    pairs.sort_unstable_by_key(|p| p.0);
    pairs.into_iter().unzip()
}

/// Trains every node of layer `t`; nodes run in parallel.
///
/// A node whose training set is empty gets an all-zero row. A node with no
/// positives is still fit on its negatives, which drives its probability
/// below one half.
type SparseRow = (Vec<Index>, Vec<f64>);

#[allow(clippy::too_many_arguments)]
pub fn train_layer(
    features: &SparseMatrix,
    tree: &TreeTopology,
    t: usize,
    targets: &SparseMatrix,
    parent_targets: &SparseMatrix,
    plan: &NegativeSamplingPlan,
    params: &RankerParams,
    seed: u64,
) -> Result<LayerWeights> {
    if t == 0 || t > tree.depth() {
        return Err(Error::InvalidArgument(format!("layer {t} outside 1..={}", tree.depth())));
    }
    if features.rows() != targets.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            found: targets.rows(),
        });
    }
    let sets = NodeSets::new(tree, t, targets, parent_targets, plan)?;
    let d = features.cols();
    // (weight row, node had no data, node had no positives)
    let rows: Vec<(SparseRow, bool, bool)> = (0..sets.n_nodes())
        .into_par_iter()
        .map_init(
            || vec![u32::MAX; d + 1],
            |local_of, c| {
                let (instances, positive) = sets.get(c);
                let empty = instances.is_empty();
                let no_pos = !positive.iter().any(|&p| p);
                let node_seed = crate::seed::derive_seed(seed, &[t as u64, c as u64]);
                let row = fit_node(features, &instances, &positive, &params.solver, node_seed, local_of);
                (row, empty, no_pos)
            },
        )
        .collect();
    let empty = rows.iter().filter(|r| r.1).count();
    let no_pos = rows.iter().filter(|r| r.2).count();
    if empty > 0 || no_pos > 0 {
        log::info!("layer {t}: {empty} nodes without data, {no_pos} nodes without positives");
    }
    let nnz = rows.iter().map(|r| r.0 .0.len()).sum();
    let mut b = CsrBuilder::with_capacity(d + 1, rows.len(), nnz);
    for ((idx, val), _, _) in &rows {
        b.push_row(idx, val);
    }
    Ok(LayerWeights {
        layer: t,
        matrix: prune_weights(&b.finish(), params.prune_threshold),
    })
}

/// Drops entries with `|w| < threshold`.
pub fn prune_weights(w: &SparseMatrix, threshold: f64) -> SparseMatrix {
    w.prune(threshold)
}

/// `ln σ(wᵀx + bias)` clamped to `[ln 1e-12, ln(1 − 1e-12)]`.
///
/// `w` spans `x_dim + 1` columns with the bias in the last one.
#[inline]
pub fn log_node_probability(w: RowView<'_>, x_idx: &[Index], x_val: &[f64], x_dim: usize) -> f64 {
    let bias = match w.indices.last() {
        Some(&j) if j as usize == x_dim => w.values[w.values.len() - 1],
        _ => 0.0,
    };
    let z = sparse_dot(w.indices, w.values, x_idx, x_val) + bias;
    let lp = if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    };
    lp.clamp(PROB_FLOOR.ln(), (-PROB_FLOOR).ln_1p())
}

pub fn node_probability(w: RowView<'_>, x: &crate::sparse::SparseVector) -> f64 {
    log_node_probability(w, x.indices(), x.values(), x.dim()).exp()
}
