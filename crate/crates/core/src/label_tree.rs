//! Hierarchical label tree construction.
//!
//! Labels are embedded by PIFA (normalized sum of their positive instances'
//! features) and recursively split by spherical k-means. Each layer `t` is
//! described by an indexing matrix `C^(t)` of shape `K_t × K_{t-1}` whose
//! rows are one-hot parent assignments; `K_0 = 1` is the implicit root and
//! the last layer has one node per label (node id = label id).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kmeans::{spherical_kmeans, Scratch};
use crate::seed::rng_for;
use crate::sparse::{CsrBuilder, Index, RowView, SparseMatrix};

/// One unit-normalized row per label; labels without positives get a zero row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbedding {
    pub matrix: SparseMatrix,
    pub zero_rows: Vec<usize>,
}

pub fn pifa_embeddings(data: &Dataset) -> LabelEmbedding {
    let sums = data
        .labels
        .transpose()
        .matmul(&data.features)
        .expect("label and feature matrices share the instance axis");
    let matrix = sums.l2_normalize_rows();
    let zero_rows: Vec<usize> = (0..matrix.rows())
        .filter(|&r| matrix.row(r).values.iter().all(|&v| v == 0.0))
        .collect();
    if !zero_rows.is_empty() {
        log::warn!("{} labels have no positive instances", zero_rows.len());
    }
    LabelEmbedding { matrix, zero_rows }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub branching: usize,
    pub max_leaf: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            branching: 8,
            max_leaf: 100,
            max_iter: 20,
            seed: 0,
        }
    }
}

/// Child lists of one layer, in CSR form over the parent layer.
#[derive(Clone, Debug, PartialEq)]
struct ChildIndex {
    offsets: Vec<usize>,
    nodes: Vec<Index>,
    parent: Vec<Index>,
}

impl ChildIndex {
    fn from_indexing(c: &SparseMatrix) -> Self {
        let t = c.transpose();
        let parent = (0..c.rows()).map(|r| c.row(r).indices[0]).collect();
        Self {
            offsets: t.offsets().to_vec(),
            nodes: t.indices().to_vec(),
            parent,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TreeTopology {
    branching: usize,
    indexing: Vec<SparseMatrix>,
    children: Vec<ChildIndex>,
}

impl PartialEq for TreeTopology {
    fn eq(&self, other: &Self) -> bool {
        self.branching == other.branching && self.indexing == other.indexing
    }
}

impl TreeTopology {
    /// Validates and indexes a list of `C^(1) … C^(d)`.
    pub fn from_indexing(branching: usize, indexing: Vec<SparseMatrix>) -> Result<Self> {
        if indexing.is_empty() {
            return Err(Error::InvalidArgument("tree needs at least one layer".into()));
        }
        let mut prev = 1;
        for (t, c) in indexing.iter().enumerate() {
            let layer = t + 1;
            if c.cols() != prev {
                return Err(Error::InvalidArgument(format!(
                    "C^({layer}) has {} columns, previous layer has {prev} nodes",
                    c.cols()
                )));
            }
            for r in 0..c.rows() {
                let row = c.row(r);
                if row.nnz() != 1 || row.values[0] != 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "C^({layer}) row {r} is not a one-hot parent assignment"
                    )));
                }
            }
            let mut has_child = vec![false; prev];
            for &p in c.indices() {
                has_child[p as usize] = true;
            }
            if let Some(p) = has_child.iter().position(|&h| !h) {
                return Err(Error::InvalidArgument(format!(
                    "C^({layer}) leaves parent {p} without children"
                )));
            }
            prev = c.rows();
        }
        let children = indexing.iter().map(ChildIndex::from_indexing).collect();
        Ok(Self {
            branching,
            indexing,
            children,
        })
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.indexing.len()
    }

    /// `K_t`; `K_0 = 1`.
    pub fn layer_size(&self, t: usize) -> usize {
        if t == 0 {
            1
        } else {
            self.indexing[t - 1].rows()
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.indexing.iter().map(|c| c.rows()).collect()
    }

    pub fn n_labels(&self) -> usize {
        self.layer_size(self.depth())
    }

    pub fn max_layer_width(&self) -> usize {
        self.layer_sizes().into_iter().max().unwrap_or(1)
    }

    /// `C^(t)` for `t ∈ [1, d]`.
    pub fn indexing(&self, t: usize) -> &SparseMatrix {
        &self.indexing[t - 1]
    }

    pub fn indexing_matrices(&self) -> &[SparseMatrix] {
        &self.indexing
    }

    /// Nodes of layer `t` whose parent is `parent` (a node of layer `t-1`).
    pub fn children(&self, t: usize, parent: usize) -> &[Index] {
        let ci = &self.children[t - 1];
        &ci.nodes[ci.offsets[parent]..ci.offsets[parent + 1]]
    }

    pub fn parent(&self, t: usize, node: usize) -> usize {
        self.children[t - 1].parent[node] as usize
    }

    /// Root-to-leaf node ids of `label` at layers `1..=d`.
    pub fn path(&self, label: usize) -> Vec<usize> {
        let d = self.depth();
        let mut path = vec![0; d];
        let mut node = label;
        for t in (1..=d).rev() {
            path[t - 1] = node;
            node = self.parent(t, node);
        }
        path
    }

    /// Expands a binary indicator over layer `t-1` to the children at layer `t`.
    pub fn layer_candidates(&self, t: usize, parents: &[bool]) -> Result<Vec<bool>> {
        if t == 0 || t > self.depth() {
            return Err(Error::InvalidArgument(format!("layer {t} outside 1..={}", self.depth())));
        }
        if parents.len() != self.layer_size(t - 1) {
            return Err(Error::DimensionMismatch {
                expected: self.layer_size(t - 1),
                found: parents.len(),
            });
        }
        let mut out = vec![false; self.layer_size(t)];
        for (p, _) in parents.iter().enumerate().filter(|(_, &a)| a) {
            for &c in self.children(t, p) {
                out[c as usize] = true;
            }
        }
        Ok(out)
    }
}

fn one_hot_indexing(parent_of: &[usize], n_parents: usize) -> SparseMatrix {
    let mut b = CsrBuilder::with_capacity(n_parents, parent_of.len(), parent_of.len());
    for &p in parent_of {
        b.push_row(&[p as Index], &[1.0]);
    }
    b.finish()
}

/// Recursive B-ary spherical k-means over label embeddings.
///
/// Clusters with more than `max_leaf` labels are split; clusters that are
/// already small are carried down unchanged as a single child until every
/// cluster fits. The last layer then fans each cluster out to its labels.
pub fn build_tree(emb: &LabelEmbedding, params: &TreeParams) -> Result<TreeTopology> {
    if params.branching < 2 {
        return Err(Error::InvalidArgument("branching factor must be at least 2".into()));
    }
    if params.max_leaf < 1 {
        return Err(Error::InvalidArgument("max_leaf must be at least 1".into()));
    }
    let n_labels = emb.matrix.rows();
    if n_labels == 0 {
        return Err(Error::InvalidArgument("no labels to cluster".into()));
    }
    let dim = emb.matrix.cols();
    let rows: Vec<RowView<'_>> = (0..n_labels).map(|r| emb.matrix.row(r)).collect();

    let mut clusters: Vec<Vec<usize>> = vec![(0..n_labels).collect()];
    let mut indexing = Vec::new();
    let mut layer = 0u64;
    while clusters.iter().any(|c| c.len() > params.max_leaf) {
        layer += 1;
        let parts: Vec<Vec<Vec<usize>>> = clusters
            .par_iter()
            .enumerate()
            .map_init(
                || Scratch::new(dim),
                |scratch, (ci, members)| {
                    if members.len() <= params.max_leaf {
                        return vec![members.clone()];
                    }
                    let k = params.branching.min(members.len());
                    let points: Vec<RowView<'_>> = members.iter().map(|&m| rows[m]).collect();
                    let mut rng = rng_for(params.seed, &[layer, ci as u64]);
                    let assign = spherical_kmeans(&points, k, params.max_iter, &mut rng, scratch);
                    let mut split = vec![Vec::new(); k];
                    for (&m, &a) in members.iter().zip(&assign) {
                        split[a].push(m);
                    }
                    split
                },
            )
            .collect();
        let mut next = Vec::new();
        let mut parent_of = Vec::new();
        for (ci, split) in parts.into_iter().enumerate() {
            for part in split {
                parent_of.push(ci);
                next.push(part);
            }
        }
        indexing.push(one_hot_indexing(&parent_of, clusters.len()));
        clusters = next;
    }
    let mut label_parent = vec![0usize; n_labels];
    for (ci, members) in clusters.iter().enumerate() {
        for &m in members {
            label_parent[m] = ci;
        }
    }
    indexing.push(one_hot_indexing(&label_parent, clusters.len()));
    TreeTopology::from_indexing(params.branching, indexing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseVector;

    fn dataset(features: &[&[f64]], labels: &[&[Index]], n_labels: usize) -> Dataset {
        let d = features[0].len();
        let f: Vec<f64> = features.iter().flat_map(|r| r.iter().copied()).collect();
        let mut lb = CsrBuilder::with_capacity(n_labels, labels.len(), 0);
        for l in labels {
            lb.push_row(l, &vec![1.0; l.len()]);
        }
        Dataset::new(SparseMatrix::from_dense(features.len(), d, &f), lb.finish()).unwrap()
    }

    fn orthogonal(n: usize) -> LabelEmbedding {
        LabelEmbedding {
            matrix: SparseMatrix::identity(n),
            zero_rows: vec![],
        }
    }

    #[test]
    fn pifa_single_positive_is_normalized_instance() {
        let d = dataset(&[&[3.0, 4.0]], &[&[0]], 1);
        let e = pifa_embeddings(&d);
        assert_eq!(e.matrix.row(0).values, &[0.6, 0.8]);
    }

    #[test]
    fn pifa_sums_then_normalizes() {
        let d = dataset(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[0], &[0]], 1);
        let e = pifa_embeddings(&d);
        let h = 1.0 / 2f64.sqrt();
        for &v in e.matrix.row(0).values {
            assert!((v - h).abs() < 1e-15);
        }
    }

    #[test]
    fn pifa_flags_label_without_positives() {
        let d = dataset(&[&[1.0, 0.0]], &[&[0]], 2);
        let e = pifa_embeddings(&d);
        assert_eq!(e.zero_rows, vec![1]);
        assert_eq!(e.matrix.row_nnz(1), 0);
    }

    #[test]
    fn sixteen_orthogonal_labels() {
        let params = TreeParams {
            branching: 8,
            max_leaf: 2,
            ..TreeParams::default()
        };
        let tree = build_tree(&orthogonal(16), &params).unwrap();
        let sizes = tree.layer_sizes();
        assert_eq!(tree.depth(), 3, "{sizes:?}");
        assert_eq!(sizes[0], 8);
        assert!(sizes[1] <= 16);
        assert_eq!(sizes[2], 16);
        for t in 1..tree.depth() {
            assert!(tree.layer_size(t) <= 8 * tree.layer_size(t - 1));
        }
    }

    #[test]
    fn single_label_tree() {
        let tree = build_tree(&orthogonal(1), &TreeParams::default()).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.indexing(1), &SparseMatrix::identity(1));
    }

    #[test]
    fn branching_above_label_count_falls_back() {
        let params = TreeParams {
            branching: 8,
            max_leaf: 1,
            ..TreeParams::default()
        };
        let tree = build_tree(&orthogonal(3), &params).unwrap();
        assert_eq!(tree.layer_sizes(), vec![3, 3]);
    }

    #[test]
    fn build_is_deterministic() {
        let rows: Vec<SparseVector> = (0..40)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.91).cos();
                SparseVector::from_dense(&[a, b, (a * b).abs(), 0.1]).l2_normalized()
            })
            .collect();
        let emb = LabelEmbedding {
            matrix: SparseMatrix::from_row_vectors(4, &rows).unwrap(),
            zero_rows: vec![],
        };
        let params = TreeParams {
            branching: 3,
            max_leaf: 4,
            seed: 11,
            ..TreeParams::default()
        };
        assert_eq!(build_tree(&emb, &params).unwrap(), build_tree(&emb, &params).unwrap());
    }

    #[test]
    fn candidates_expand_parents() {
        let params = TreeParams {
            branching: 8,
            max_leaf: 8,
            ..TreeParams::default()
        };
        let tree = build_tree(&orthogonal(64), &params).unwrap();
        let k1 = tree.layer_size(1);
        assert_eq!(tree.layer_candidates(1, &[true]).unwrap(), vec![true; k1]);
        assert_eq!(tree.layer_candidates(1, &[false]).unwrap(), vec![false; k1]);
        let t = tree.depth();
        let mut parents = vec![false; tree.layer_size(t - 1)];
        parents[0] = true;
        let got = tree.layer_candidates(t, &parents).unwrap();
        let c = tree.indexing(t);
        let want: Vec<bool> = (0..c.rows()).map(|r| c.row(r).indices[0] == 0).collect();
        assert_eq!(got, want);
        assert!(tree.layer_candidates(t, &[true]).is_err());
    }

    #[test]
    fn rejects_invalid_indexing() {
        let two_parents = SparseMatrix::from_dense(2, 1, &[1.0, 1.0]);
        let bad = SparseMatrix::from_dense(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(TreeTopology::from_indexing(2, vec![two_parents.clone(), bad]).is_err());
        assert!(TreeTopology::from_indexing(2, vec![two_parents]).is_ok());
    }
}
