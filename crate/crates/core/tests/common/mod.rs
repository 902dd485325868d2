#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmc_core::label_tree::{build_tree, LabelEmbedding, TreeParams};
use xmc_core::{Dataset, LabelTree, SparseMatrix, SparseVector, TrainParams};

/// Instances drawn around one prototype per label, each carrying that label
/// and, sometimes, a neighbouring one.
pub fn clustered(n: usize, n_labels: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<usize>> = (0..n_labels)
        .map(|_| rand::seq::index::sample(&mut rng, dim, 4).into_vec())
        .collect();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let l = rng.gen_range(0..n_labels);
        let mut dense = vec![0.0; dim];
        for &j in &protos[l] {
            dense[j] = rng.gen_range(0.5..1.0);
        }
        dense[rng.gen_range(0..dim)] += rng.gen_range(0.0..0.3);
        xs.push(SparseVector::from_dense(&dense).l2_normalized());
        let mut labels = vec![0.0; n_labels];
        labels[l] = 1.0;
        if rng.gen_bool(0.3) {
            labels[(l + 1) % n_labels] = 1.0;
        }
        ys.push(SparseVector::from_dense(&labels));
    }
    Dataset::new(
        SparseMatrix::from_row_vectors(dim, &xs).unwrap(),
        SparseMatrix::from_row_vectors(n_labels, &ys).unwrap(),
    )
    .unwrap()
}

/// Random tree over random label embeddings with random sparse weights.
pub fn random_model(rng: &mut ChaCha8Rng, n_labels: usize, dim: usize) -> LabelTree {
    let emb: Vec<SparseVector> = (0..n_labels)
        .map(|_| {
            let dense: Vec<f64> = (0..dim)
                .map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..1.0) } else { 0.0 })
                .collect();
            SparseVector::from_dense(&dense).l2_normalized()
        })
        .collect();
    let emb = LabelEmbedding {
        matrix: SparseMatrix::from_row_vectors(dim, &emb).unwrap(),
        zero_rows: vec![],
    };
    let params = TreeParams {
        branching: rng.gen_range(2..=8),
        max_leaf: rng.gen_range(1..=16),
        max_iter: 20,
        seed: rng.gen(),
    };
    let tree = build_tree(&emb, &params).unwrap();
    let weights = (1..=tree.depth())
        .map(|t| {
            let rows = tree.layer_size(t);
            let dense: Vec<f64> = (0..rows * (dim + 1))
                .map(|_| if rng.gen_bool(0.5) { rng.gen_range(-3.0..3.0) } else { 0.0 })
                .collect();
            SparseMatrix::from_dense(rows, dim + 1, &dense)
        })
        .collect();
    LabelTree::new(tree, weights, dim, TrainParams::default()).unwrap()
}

pub fn random_query(rng: &mut ChaCha8Rng, dim: usize) -> SparseVector {
    let dense: Vec<f64> = (0..dim)
        .map(|_| if rng.gen_bool(0.6) { rng.gen_range(-1.0..1.0) } else { 0.0 })
        .collect();
    SparseVector::from_dense(&dense)
}
