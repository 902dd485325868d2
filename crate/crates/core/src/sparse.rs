//! Compressed sparse containers.
//!
//! `SparseVector` stores sorted `(index, value)` pairs; `SparseMatrix` is a
//! CSR matrix. Both are immutable after construction and validated on entry,
//! so every consumer can rely on sorted, in-bounds, finite entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column index type. `u32` covers every benchmark XMC feature and label space.
pub type Index = u32;

/// Ratio above which a dot product switches from a linear merge to binary
/// search into the longer operand.
const GALLOP_RATIO: usize = 16;

/// Dot product of two sorted sparse index/value lists.
///
/// Matched products are always accumulated in ascending index order, so both
/// strategies return bit-identical results.
pub fn sparse_dot(a_idx: &[Index], a_val: &[f64], b_idx: &[Index], b_val: &[f64]) -> f64 {
    if a_idx.len() > b_idx.len() {
        return sparse_dot(b_idx, b_val, a_idx, a_val);
    }
    if a_idx.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    if a_idx.len() * GALLOP_RATIO < b_idx.len() {
        let mut lo = 0;
        for (&i, &v) in a_idx.iter().zip(a_val) {
            match b_idx[lo..].binary_search(&i) {
                Ok(pos) => {
                    sum += v * b_val[lo + pos];
                    lo += pos + 1;
                }
                Err(pos) => lo += pos,
            }
            if lo >= b_idx.len() {
                break;
            }
        }
    } else {
        let (mut p, mut q) = (0, 0);
        while p < a_idx.len() && q < b_idx.len() {
            match a_idx[p].cmp(&b_idx[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    sum += a_val[p] * b_val[q];
                    p += 1;
                    q += 1;
                }
            }
        }
    }
    sum
}

fn validate_entries(dim: usize, indices: &[Index], values: &[f64]) -> Result<()> {
    if indices.len() != values.len() {
        return Err(Error::InvalidSparse(format!(
            "{} indices but {} values",
            indices.len(),
            values.len()
        )));
    }
    for w in indices.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidSparse(format!(
                "indices not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    if let Some(&last) = indices.last() {
        if last as usize >= dim {
            return Err(Error::InvalidSparse(format!(
                "index {last} out of bounds for dimension {dim}"
            )));
        }
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidSparse(format!("non-finite value {v}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<Index>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(dim: usize, indices: Vec<Index>, values: Vec<f64>) -> Result<Self> {
        validate_entries(dim, &indices, &values)?;
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    /// Builds a vector from unsorted pairs. Duplicate indices are rejected.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(Index, f64)>) -> Result<Self> {
        pairs.sort_unstable_by_key(|&(i, _)| i);
        let (indices, values) = pairs.into_iter().unzip();
        Self::new(dim, indices, values)
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i as Index, v))
            .unzip();
        Self {
            dim: dense.len(),
            indices,
            values,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (Index, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        sparse_dot(&self.indices, &self.values, &other.indices, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit Euclidean norm; the zero vector is returned unchanged.
    pub fn l2_normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v /= norm;
            }
        }
        self
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }
}

/// Borrowed view of one CSR row.
#[derive(Clone, Copy, Debug)]
pub struct RowView<'a> {
    pub indices: &'a [Index],
    pub values: &'a [f64],
}

impl<'a> RowView<'a> {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dot(&self, v: &SparseVector) -> f64 {
        sparse_dot(self.indices, self.values, v.indices(), v.values())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Index, f64)> + 'a {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

/// Row-major compressed sparse matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<Index>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<Index>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != rows + 1 {
            return Err(Error::InvalidSparse(format!(
                "{} offsets for {} rows",
                offsets.len(),
                rows
            )));
        }
        if offsets[0] != 0 || offsets[rows] != indices.len() {
            return Err(Error::InvalidSparse(
                "offsets must start at 0 and end at nnz".into(),
            ));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidSparse("offsets decrease".into()));
        }
        if indices.len() != values.len() {
            return Err(Error::InvalidSparse(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        for r in 0..rows {
            let span = offsets[r]..offsets[r + 1];
            validate_entries(cols, &indices[span.clone()], &values[span])
                .map_err(|e| Error::InvalidSparse(format!("row {r}: {e}")))?;
        }
        Ok(Self {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            offsets: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n as Index).collect(),
            values: vec![1.0; n],
        }
    }

    /// Stacks sparse vectors as rows. Every vector must have dimension `cols`.
    pub fn from_row_vectors(cols: usize, rows: &[SparseVector]) -> Result<Self> {
        let mut builder = CsrBuilder::with_capacity(cols, rows.len(), 0);
        for (r, v) in rows.iter().enumerate() {
            if v.dim() != cols {
                return Err(Error::InvalidSparse(format!(
                    "row {r} has dimension {} (expected {cols})",
                    v.dim()
                )));
            }
            builder.push_row(v.indices(), v.values());
        }
        Ok(builder.finish())
    }

    pub fn from_dense(rows: usize, cols: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), rows * cols);
        let mut builder = CsrBuilder::with_capacity(cols, rows, 0);
        for r in 0..rows {
            let v = SparseVector::from_dense(&dense[r * cols..(r + 1) * cols]);
            builder.push_row(v.indices(), v.values());
        }
        builder.finish()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> RowView<'_> {
        let span = self.offsets[r]..self.offsets[r + 1];
        RowView {
            indices: &self.indices[span.clone()],
            values: &self.values[span],
        }
    }

    pub fn row_vector(&self, r: usize) -> SparseVector {
        let row = self.row(r);
        SparseVector {
            dim: self.cols,
            indices: row.indices.to_vec(),
            values: row.values.to_vec(),
        }
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter() {
                let slot = next[c as usize];
                indices[slot] = r as Index;
                values[slot] = v;
                next[c as usize] += 1;
            }
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            offsets,
            indices,
            values,
        }
    }

    /// Sparse-sparse product `self × other` (row-wise Gustavson accumulation).
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut acc = vec![0.0; other.cols];
        let mut seen = vec![false; other.cols];
        let mut touched: Vec<Index> = Vec::new();
        let mut builder = CsrBuilder::with_capacity(other.cols, self.rows, self.nnz());
        let mut row_vals = Vec::new();
        for r in 0..self.rows {
            for (k, a) in self.row(r).iter() {
                for (c, b) in other.row(k as usize).iter() {
                    let ci = c as usize;
                    if !seen[ci] {
                        seen[ci] = true;
                        touched.push(c);
                    }
                    acc[ci] += a * b;
                }
            }
            touched.sort_unstable();
            row_vals.clear();
            for &c in &touched {
                row_vals.push(acc[c as usize]);
                acc[c as usize] = 0.0;
                seen[c as usize] = false;
            }
            builder.push_row(&touched, &row_vals);
            touched.clear();
        }
        Ok(builder.finish())
    }

    /// Replaces every nonzero entry by 1 and drops explicit zeros.
    pub fn binarize(&self) -> SparseMatrix {
        let mut builder = CsrBuilder::with_capacity(self.cols, self.rows, self.nnz());
        let mut idx = Vec::new();
        for r in 0..self.rows {
            idx.clear();
            idx.extend(self.row(r).iter().filter(|&(_, v)| v != 0.0).map(|(c, _)| c));
            builder.push_row(&idx, &vec![1.0; idx.len()]);
        }
        builder.finish()
    }

    /// Matrix-vector product with exact sparse-sparse row dots.
    pub fn spmv(&self, v: &SparseVector) -> Result<Vec<f64>> {
        if v.dim() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: v.dim(),
            });
        }
        Ok((0..self.rows).map(|r| self.row(r).dot(v)).collect())
    }

    /// Scales every nonzero row to unit Euclidean norm. Zero rows are kept.
    pub fn l2_normalize_rows(&self) -> SparseMatrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            let span = self.offsets[r]..self.offsets[r + 1];
            let norm = out.values[span.clone()]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                for v in &mut out.values[span] {
                    *v /= norm;
                }
            }
        }
        out
    }

    /// New matrix whose i-th row is `self.row(rows[i])`. Repeats are allowed.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let nnz = rows.iter().map(|&r| self.row_nnz(r)).sum();
        let mut builder = CsrBuilder::with_capacity(self.cols, rows.len(), nnz);
        for &r in rows {
            let row = self.row(r);
            builder.push_row(row.indices, row.values);
        }
        builder.finish()
    }

    /// Drops entries with `|v| < threshold`.
    pub fn prune(&self, threshold: f64) -> SparseMatrix {
        let mut builder = CsrBuilder::with_capacity(self.cols, self.rows, self.nnz());
        let (mut idx, mut val) = (Vec::new(), Vec::new());
        for r in 0..self.rows {
            idx.clear();
            val.clear();
            for (c, v) in self.row(r).iter() {
                if v.abs() >= threshold {
                    idx.push(c);
                    val.push(v);
                }
            }
            builder.push_row(&idx, &val);
        }
        builder.finish()
    }

    /// Applies `f` to every stored value, dropping entries that become zero.
    pub fn map_values(&self, mut f: impl FnMut(usize, Index, f64) -> f64) -> SparseMatrix {
        let mut builder = CsrBuilder::with_capacity(self.cols, self.rows, self.nnz());
        let (mut idx, mut val) = (Vec::new(), Vec::new());
        for r in 0..self.rows {
            idx.clear();
            val.clear();
            for (c, v) in self.row(r).iter() {
                let nv = f(r, c, v);
                if nv != 0.0 {
                    idx.push(c);
                    val.push(nv);
                }
            }
            builder.push_row(&idx, &val);
        }
        builder.finish()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter() {
                out[r * self.cols + c as usize] = v;
            }
        }
        out
    }
}

/// Incremental CSR construction from rows that are already sorted and valid.
#[derive(Debug)]
pub(crate) struct CsrBuilder {
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<Index>,
    values: Vec<f64>,
}

impl CsrBuilder {
    pub(crate) fn with_capacity(cols: usize, rows: usize, nnz: usize) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        Self {
            cols,
            offsets,
            indices: Vec::with_capacity(nnz),
            values: Vec::with_capacity(nnz),
        }
    }

    pub(crate) fn push_row(&mut self, indices: &[Index], values: &[f64]) {
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(indices.last().is_none_or(|&c| (c as usize) < self.cols));
        self.indices.extend_from_slice(indices);
        self.values.extend_from_slice(values);
        self.offsets.push(self.indices.len());
    }

    pub(crate) fn finish(self) -> SparseMatrix {
        SparseMatrix {
            rows: self.offsets.len() - 1,
            cols: self.cols,
            offsets: self.offsets,
            indices: self.indices,
            values: self.values,
        }
    }
}
