//! Euclidean distances and exact nearest-neighbor search.
//!
//! [`l2`] is the single definition of distance used everywhere, including the
//! naive reference paths. [`RefBlock::nearest`] finds the same neighbor as a
//! linear scan with [`l2`] but does most of the work in a matrix product: the
//! expansion `|q|^2 + |r|^2 - 2 q.r` screens out references that provably
//! cannot be the minimum, and only the survivors are measured with [`l2`].
//! Results are therefore bit-identical to the scan, whatever rounding the
//! matrix product introduces.

use ndarray::{s, Array2, ArrayView2};

/// Squared Euclidean distance, accumulated in index order.
#[inline]
pub fn sq_l2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[inline]
pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    sq_l2(a, b).sqrt()
}

/// Rows processed per matrix product; bounds the scratch matrix to
/// `QUERY_TILE x n_refs` doubles.
const QUERY_TILE: usize = 64;

/// A contiguous block of reference rows with their squared norms and their
/// indices in some parent set. Parent indices must be ascending so that
/// "lowest local index" and "lowest parent index" agree on ties.
#[derive(Debug, Clone)]
pub struct RefBlock {
    rows: Array2<f64>,
    norms: Vec<f64>,
    parent: Vec<usize>,
}

/// Nearest reference to a query: parent index and exact distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub dist: f64,
}

impl RefBlock {
    /// Gathers `indices` (ascending) from `matrix`.
    pub fn gather(matrix: ArrayView2<'_, f64>, indices: &[usize]) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        let rows = matrix.select(ndarray::Axis(0), indices);
        let norms = rows.rows().into_iter().map(|r| r.dot(&r)).collect();
        RefBlock {
            rows,
            norms,
            parent: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Nearest reference for every row of `queries`. `exclude(q, parent)`
    /// removes candidates per query. Returns `None` where every reference is
    /// excluded. Equivalent to scanning references in ascending order with
    /// [`l2`] and keeping the first strict minimum.
    pub fn nearest<F>(&self, queries: ArrayView2<'_, f64>, exclude: F) -> Vec<Option<Nearest>>
    where
        F: Fn(usize, usize) -> bool,
    {
        let nq = queries.nrows();
        let d = queries.ncols() as f64;
        // Bounds |expansion - sq_l2| for both the product and the direct sum.
        let rel_tol = 8.0 * (d + 4.0) * f64::EPSILON;
        let mut out = Vec::with_capacity(nq);
        if self.is_empty() {
            out.resize(nq, None);
            return out;
        }
        let mut candidates = Vec::new();
        for start in (0..nq).step_by(QUERY_TILE) {
            let end = (start + QUERY_TILE).min(nq);
            let tile = queries.slice(s![start..end, ..]);
            let gram = tile.dot(&self.rows.t());
            for (local, g) in gram.rows().into_iter().enumerate() {
                let qi = start + local;
                let q = queries.row(qi);
                let q = q.as_slice().expect("query rows are contiguous");
                let qn: f64 = q.iter().map(|v| v * v).sum();
                let mut bound = f64::INFINITY;
                for (j, (&gj, &rn)) in g.iter().zip(&self.norms).enumerate() {
                    if exclude(qi, self.parent[j]) {
                        continue;
                    }
                    let approx = qn + rn - 2.0 * gj;
                    bound = bound.min(approx + rel_tol * (qn + rn));
                }
                if bound == f64::INFINITY {
                    out.push(None);
                    continue;
                }
                // Slack keeps every reference whose rounded distance could tie
                // the minimum after the square root.
                let bound = bound * (1.0 + 1e-14) + f64::MIN_POSITIVE;
                candidates.clear();
                for (j, (&gj, &rn)) in g.iter().zip(&self.norms).enumerate() {
                    if exclude(qi, self.parent[j]) {
                        continue;
                    }
                    let approx = qn + rn - 2.0 * gj;
                    if approx - rel_tol * (qn + rn) <= bound {
                        candidates.push(j);
                    }
                }
                let mut best: Option<Nearest> = None;
                for &j in &candidates {
                    let r = self.rows.row(j);
                    let dist = l2(q, r.as_slice().expect("reference rows are contiguous"));
                    if best.is_none_or(|b| dist < b.dist) {
                        best = Some(Nearest {
                            index: self.parent[j],
                            dist,
                        });
                    }
                }
                out.push(best);
            }
        }
        out
    }
}

/// Linear-scan nearest neighbor over `indices` of `matrix`; the reference
/// semantics for [`RefBlock::nearest`].
pub fn nearest_scan(
    matrix: ArrayView2<'_, f64>,
    indices: impl IntoIterator<Item = usize>,
    query: &[f64],
) -> Option<Nearest> {
    let mut best: Option<Nearest> = None;
    for i in indices {
        let r = matrix.row(i);
        let dist = l2(query, r.as_slice().expect("contiguous rows"));
        if best.is_none_or(|b| dist < b.dist) {
            best = Some(Nearest { index: i, dist });
        }
    }
    best
}
