use std::thread;

use crate::{Result, UmapError};

/// `k` nearest other points per row, distances ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub n: usize,
    pub k: usize,
    /// `n x k`, row-major.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Knn {
    pub fn neighbors(&self, i: usize) -> (&[usize], &[f64]) {
        (&self.indices[i * self.k..(i + 1) * self.k], &self.distances[i * self.k..(i + 1) * self.k])
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

fn query(points: &[f64], dim: usize, n: usize, k: usize, i: usize, scratch: &mut Vec<(f64, usize)>) -> Vec<(f64, usize)> {
    let q = &points[i * dim..(i + 1) * dim];
    scratch.clear();
    scratch.extend((0..n).filter(|&j| j != i).map(|j| (sq_dist(q, &points[j * dim..(j + 1) * dim]), j)));
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scratch.len() {
        scratch.select_nth_unstable_by(k - 1, cmp);
    }
    let mut best = scratch[..k].to_vec();
    best.sort_unstable_by(cmp);
    best
}

/// Exact Euclidean kNN by brute force. Ties go to the lower index. Queries
/// are split across threads; the result does not depend on the split.
pub fn knn_exact(points: &[f64], dim: usize, k: usize) -> Result<Knn> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(UmapError::Input(format!("{} values are not rows of width {dim}", points.len())));
    }
    let n = points.len() / dim;
    if k == 0 || n <= k {
        return Err(UmapError::Input(format!("kNN needs more than k = {k} points, got {n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(UmapError::Input("non-finite coordinate".into()));
    }
    let threads = thread::available_parallelism().map_or(1, |t| t.get()).min(n.div_ceil(64)).max(1);
    let rows_per = n.div_ceil(threads);
    let mut indices = vec![0usize; n * k];
    let mut distances = vec![0.0; n * k];
    thread::scope(|s| {
        for (t, (idx, dst)) in indices.chunks_mut(rows_per * k).zip(distances.chunks_mut(rows_per * k)).enumerate() {
            s.spawn(move || {
                let mut scratch = Vec::with_capacity(n);
                for (r, (irow, drow)) in idx.chunks_mut(k).zip(dst.chunks_mut(k)).enumerate() {
                    let best = query(points, dim, n, k, t * rows_per + r, &mut scratch);
                    for (c, (d2, j)) in best.into_iter().enumerate() {
                        irow[c] = j;
                        drow[c] = d2.sqrt();
                    }
                }
            });
        }
    });
    Ok(Knn { n, k, indices, distances })
}
