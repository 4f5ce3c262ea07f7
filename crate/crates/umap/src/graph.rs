use std::collections::BTreeMap;

use crate::knn::Knn;

/// Bisection bracket for the kernel bandwidth.
pub const SIGMA_BRACKET: (f64, f64) = (1e-8, 1e4);
const BISECTION_STEPS: usize = 64;

fn kernel_sum(distances: &[f64], rho: f64, sigma: f64) -> f64 {
    distances.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Returns `(rho, sigma)` for one point's ascending neighbor distances:
/// `rho` is the smallest positive distance and `sigma` makes the kernel sum
/// equal `log2(k)`, clamped to [`SIGMA_BRACKET`] when that is impossible.
pub fn smooth_knn(distances: &[f64]) -> (f64, f64) {
    let rho = distances.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let target = (distances.len() as f64).log2();
    let (mut lo, mut hi) = SIGMA_BRACKET;
    if kernel_sum(distances, rho, lo) >= target {
        return (rho, lo);
    }
    if kernel_sum(distances, rho, hi) <= target {
        return (rho, hi);
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if kernel_sum(distances, rho, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (rho, 0.5 * (lo + hi))
}

/// Directed membership strengths `w_ij` from the kNN graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedWeights {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn membership_strengths(knn: &Knn) -> DirectedWeights {
    let mut out = DirectedWeights {
        n: knn.n,
        entries: Vec::with_capacity(knn.n * knn.k),
        rho: Vec::with_capacity(knn.n),
        sigma: Vec::with_capacity(knn.n),
    };
    for i in 0..knn.n {
        let (idx, dist) = knn.neighbors(i);
        let (rho, sigma) = smooth_knn(dist);
        for (&j, &d) in idx.iter().zip(dist) {
            let w = (-(d - rho).max(0.0) / sigma).exp();
            if w > 0.0 {
                out.entries.push((i, j, w));
            }
        }
        out.rho.push(rho);
        out.sigma.push(sigma);
    }
    out
}

/// Symmetric fuzzy graph. Every undirected edge appears in both
/// directions, sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl FuzzyGraph {
    /// Graph with no edges, used for tiny inputs.
    pub fn empty(n: usize) -> Self {
        Self { n, edges: Vec::new(), rho: vec![0.0; n], sigma: vec![SIGMA_BRACKET.0; n] }
    }

    /// Probabilistic t-conorm `a + b - ab`.
    pub fn union_weight(a: f64, b: f64) -> f64 {
        a + b - a * b
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let row = self.edges.partition_point(|e| (e.0, e.1) < (i, j));
        match self.edges.get(row) {
            Some(&(a, b, w)) if a == i && b == j => w,
            _ => 0.0,
        }
    }
}

pub fn fuzzy_union(directed: &DirectedWeights) -> FuzzyGraph {
    let mut pairs: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for &(i, j, w) in &directed.entries {
        if i == j {
            continue;
        }
        let e = pairs.entry((i.min(j), i.max(j))).or_insert((0.0, 0.0));
        if i < j {
            e.0 = w;
        } else {
            e.1 = w;
        }
    }
    let mut edges = Vec::with_capacity(2 * pairs.len());
    for ((i, j), (a, b)) in pairs {
        let w = FuzzyGraph::union_weight(a, b);
        if w > 0.0 {
            edges.push((i, j, w));
            edges.push((j, i, w));
        }
    }
    edges.sort_unstable_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    FuzzyGraph { n: directed.n, edges, rho: directed.rho.clone(), sigma: directed.sigma.clone() }
}
