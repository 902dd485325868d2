//! Spherical k-means over sparse unit vectors.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::sparse::{Index, RowView, SparseVector};

/// Dense scratch buffer for scoring many sparse points against one centroid.
pub(crate) struct Scratch {
    dense: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            dense: vec![0.0; dim],
        }
    }

    /// Cosine similarity of every point with `centroid` (both unit norm).
    fn similarities(&mut self, centroid: &SparseVector, points: &[RowView<'_>], out: &mut [f64]) {
        for (i, v) in centroid.iter() {
            self.dense[i as usize] = v;
        }
        for (p, o) in points.iter().zip(out.iter_mut()) {
            *o = p.iter().map(|(i, v)| v * self.dense[i as usize]).sum();
        }
        for &i in centroid.indices() {
            self.dense[i as usize] = 0.0;
        }
    }

    /// Normalized sum of the selected points.
    fn centroid(&mut self, points: &[RowView<'_>], members: impl Iterator<Item = usize>) -> SparseVector {
        let mut touched: Vec<Index> = Vec::new();
        for m in members {
            for (i, v) in points[m].iter() {
                let slot = &mut self.dense[i as usize];
                if *slot == 0.0 {
                    touched.push(i);
                }
                *slot += v;
                if *slot == 0.0 {
                    // keep the entry tracked even if it cancels to zero
                    *slot = f64::MIN_POSITIVE;
                }
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let values: Vec<f64> = touched
            .iter()
            .map(|&i| std::mem::take(&mut self.dense[i as usize]))
            .collect();
        SparseVector::new(self.dense.len(), touched, values)
            .expect("centroid entries are sorted and in bounds")
            .l2_normalized()
    }
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Partitions `points` into exactly `k` non-empty clusters (`k ≤ points.len()`).
///
/// Zero vectors take no part in the geometry; they are dealt round-robin to
/// clusters after convergence. Empty clusters are repaired by moving the
/// point farthest from its centroid out of the largest cluster.
pub(crate) fn spherical_kmeans<R: Rng>(
    points: &[RowView<'_>],
    k: usize,
    max_iter: usize,
    rng: &mut R,
    scratch: &mut Scratch,
) -> Vec<usize> {
    assert!(k >= 1 && k <= points.len());
    let nonzero: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].values.iter().any(|&v| v != 0.0))
        .collect();
    let mut assign = vec![0usize; points.len()];

    if nonzero.len() >= k {
        let sub: Vec<RowView<'_>> = nonzero.iter().map(|&i| points[i]).collect();
        let local = lloyd(&sub, k, max_iter, rng, scratch);
        for (&i, &c) in nonzero.iter().zip(&local) {
            assign[i] = c;
        }
    } else {
        for (c, &i) in nonzero.iter().enumerate() {
            assign[i] = c;
        }
    }
    let zero_rows = (0..points.len()).filter(|i| nonzero.binary_search(i).is_err());
    for (j, i) in zero_rows.enumerate() {
        assign[i] = j % k;
    }
    repair_empty(points, k, &mut assign, scratch);
    assign
}

fn seed_centroids<R: Rng>(
    points: &[RowView<'_>],
    k: usize,
    rng: &mut R,
    scratch: &mut Scratch,
) -> Vec<SparseVector> {
    let dim = scratch.dense.len();
    let n = points.len();
    let to_vec = |p: &RowView<'_>| {
        SparseVector::new(dim, p.indices.to_vec(), p.values.to_vec())
            .expect("row entries are valid")
            .l2_normalized()
    };
    let mut chosen = vec![false; n];
    let mut best_sim = vec![f64::NEG_INFINITY; n];
    let mut sims = vec![0.0; n];
    let mut centroids = Vec::with_capacity(k);
    let mut next = rng.gen_range(0..n);
    loop {
        chosen[next] = true;
        let c = to_vec(&points[next]);
        scratch.similarities(&c, points, &mut sims);
        for (b, &s) in best_sim.iter_mut().zip(&sims) {
            *b = b.max(s);
        }
        centroids.push(c);
        if centroids.len() == k {
            break;
        }
        let weights: Vec<f64> = (0..n)
            .map(|i| if chosen[i] { 0.0 } else { (1.0 - best_sim[i]).max(0.0) })
            .collect();
        next = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            // every remaining point duplicates a centroid
            Err(_) => (0..n).find(|&i| !chosen[i]).expect("k <= n"),
        };
    }
    centroids
}

fn lloyd<R: Rng>(
    points: &[RowView<'_>],
    k: usize,
    max_iter: usize,
    rng: &mut R,
    scratch: &mut Scratch,
) -> Vec<usize> {
    let n = points.len();
    let mut centroids = seed_centroids(points, k, rng, scratch);
    let mut sims = vec![vec![0.0; n]; k];
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        for (c, s) in centroids.iter().zip(sims.iter_mut()) {
            scratch.similarities(c, points, s);
        }
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = argmax_lowest(sims.iter().map(|s| s[i]));
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members = (0..n).filter(|&i| assign[i] == c);
            let updated = scratch.centroid(points, members);
            if updated.nnz() > 0 {
                *centroid = updated;
            }
        }
    }
    assign
}

fn repair_empty(points: &[RowView<'_>], k: usize, assign: &mut [usize], scratch: &mut Scratch) {
    let mut sizes = vec![0usize; k];
    for &a in assign.iter() {
        sizes[a] += 1;
    }
    if sizes.iter().all(|&s| s > 0) {
        return;
    }
    let centroids: Vec<SparseVector> = (0..k)
        .map(|c| scratch.centroid(points, (0..points.len()).filter(|&i| assign[i] == c)))
        .collect();
    let mut fit = vec![0.0; points.len()];
    let mut buf = vec![0.0; points.len()];
    for (c, centroid) in centroids.iter().enumerate() {
        scratch.similarities(centroid, points, &mut buf);
        for i in 0..points.len() {
            if assign[i] == c {
                fit[i] = buf[i];
            }
        }
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = argmax_lowest(sizes.iter().map(|&s| s as f64));
        debug_assert!(sizes[largest] >= 2);
        let farthest = (0..points.len())
            .filter(|&i| assign[i] == largest)
            .min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)))
            .expect("largest cluster is non-empty");
        assign[farthest] = empty;
        fit[farthest] = 1.0;
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(m: &SparseMatrix) -> Vec<RowView<'_>> {
        (0..m.rows()).map(|r| m.row(r)).collect()
    }

    #[test]
    fn separates_two_directions() {
        let m = SparseMatrix::from_dense(
            4,
            2,
            &[1.0, 0.0, 0.99, 0.14, 0.0, 1.0, 0.1, 0.995],
        )
        .l2_normalize_rows();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = spherical_kmeans(&rows(&m), 2, 20, &mut rng, &mut Scratch::new(2));
        assert_eq!(a[0], a[1]);
        assert_eq!(a[2], a[3]);
        assert_ne!(a[0], a[2]);
    }

    #[test]
    fn duplicates_still_give_k_nonempty_clusters() {
        let m = SparseMatrix::from_dense(5, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = spherical_kmeans(&rows(&m), 3, 20, &mut rng, &mut Scratch::new(2));
        for c in 0..3 {
            assert!(a.contains(&c));
        }
    }

    #[test]
    fn zero_rows_round_robin() {
        let m = SparseMatrix::from_dense(4, 2, &[0.0; 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = spherical_kmeans(&rows(&m), 2, 20, &mut rng, &mut Scratch::new(2));
        assert_eq!(a, vec![0, 1, 0, 1]);
    }
}
