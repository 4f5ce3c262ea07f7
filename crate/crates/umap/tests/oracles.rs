use icetopo::analysis::{kmeans, silhouette, KMeansConfig};
use icetopo_umap::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Full sort of every other point by (distance, index).
fn knn_oracle(points: &[f64], dim: usize, k: usize) -> (Vec<usize>, Vec<f64>) {
    let n = points.len() / dim;
    let mut idx = Vec::new();
    let mut dst = Vec::new();
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d2: f64 = (0..dim).map(|d| (points[i * dim + d] - points[j * dim + d]).powi(2)).sum();
                (d2.sqrt(), j)
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(d, j) in &all[..k] {
            idx.push(j);
            dst.push(d);
        }
    }
    (idx, dst)
}

#[test]
fn knn_matches_full_sort() {
    for (n, dim, k, seed) in [(200, 16, 15, 1), (500, 16, 50, 2), (60, 3, 59, 3)] {
        let pts = random_points(n, dim, seed);
        let knn = knn_exact(&pts, dim, k).unwrap();
        let (idx, dst) = knn_oracle(&pts, dim, k);
        assert_eq!(knn.indices, idx);
        assert_eq!(knn.distances, dst);
    }
}

#[test]
fn knn_ties_on_a_lattice() {
    // Integer lattice: many exactly equal distances.
    let pts: Vec<f64> = (0..6).flat_map(|x| (0..6).flat_map(move |y| [x as f64, y as f64])).collect();
    let knn = knn_exact(&pts, 2, 8).unwrap();
    let (idx, _) = knn_oracle(&pts, 2, 8);
    assert_eq!(knn.indices, idx);
}

fn kernel_residual(dist: &[f64]) -> Option<f64> {
    let (rho, sigma) = smooth_knn(dist);
    if sigma <= SIGMA_BRACKET.0 * 1.000001 || sigma >= SIGMA_BRACKET.1 * 0.999999 {
        return None;
    }
    let s: f64 = dist.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum();
    Some((s - (dist.len() as f64).log2()).abs())
}

proptest! {
    #[test]
    fn smooth_knn_hits_target_off_clamp(mut dist in prop::collection::vec(0.0f64..10.0, 2..60)) {
        dist.sort_by(f64::total_cmp);
        if let Some(r) = kernel_residual(&dist) {
            prop_assert!(r < 1e-5, "residual {}", r);
        }
    }

    #[test]
    fn smooth_knn_scale_equivariant(
        mut dist in prop::collection::vec(0.01f64..5.0, 3..40),
        c in 0.1f64..20.0,
    ) {
        dist.sort_by(f64::total_cmp);
        let (rho, sigma) = smooth_knn(&dist);
        let scaled: Vec<f64> = dist.iter().map(|d| d * c).collect();
        let (rho_c, sigma_c) = smooth_knn(&scaled);
        prop_assert!((rho_c - c * rho).abs() <= 1e-12 * c * rho);
        if kernel_residual(&dist).is_some() && kernel_residual(&scaled).is_some() {
            prop_assert!((sigma_c - c * sigma).abs() <= 1e-6 * c * sigma, "{} vs {}", sigma_c, c * sigma);
        }
    }

    #[test]
    fn fuzzy_graph_is_symmetric(n in 12usize..60, k in 2usize..10, seed in 0u64..1000) {
        let pts = random_points(n, 4, seed);
        let knn = knn_exact(&pts, 4, k).unwrap();
        let directed = membership_strengths(&knn);
        prop_assert!(directed.entries.iter().all(|e| e.2 > 0.0 && e.2 <= 1.0));
        let g = fuzzy_union(&directed);
        for &(i, j, w) in &g.edges {
            prop_assert!(i != j);
            prop_assert!(w > 0.0 && w <= 1.0);
            prop_assert_eq!(g.weight(j, i), w);
        }
    }
}

#[test]
fn smooth_knn_four_neighbor_bisection() {
    // Adjusted distances [0, 1, 2, 3] with target log2(4) = 2.
    let (_, sigma) = smooth_knn(&[0.5, 1.5, 2.5, 3.5]);
    let s = 1.0 + (-1.0 / sigma).exp() + (-2.0 / sigma).exp() + (-3.0 / sigma).exp();
    assert!((s - 2.0).abs() < 1e-6);
    // Independent solve: Newton on g(t) = t + t^2 + t^3 - 1 with t = exp(-1/sigma).
    let mut t = 0.5f64;
    for _ in 0..50 {
        t -= (t + t * t + t * t * t - 1.0) / (1.0 + 2.0 * t + 3.0 * t * t);
    }
    assert!((sigma - (-1.0 / t.ln())).abs() < 1e-9);
}

/// Grid search followed by Nelder-Mead on the mean squared residual.
fn ab_oracle(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (1..=300).map(|i| 3.0 * spread * i as f64 / 300.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| if x <= min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() }).collect();
    let cost = |p: [f64; 2]| -> f64 {
        if p[0] <= 0.0 || p[1] <= 0.0 {
            return f64::INFINITY;
        }
        xs.iter().zip(&ys).map(|(&x, &y)| (1.0 / (1.0 + p[0] * x.powf(2.0 * p[1])) - y).powi(2)).sum::<f64>()
            / xs.len() as f64
    };
    let mut best = [1.0, 1.0];
    for ia in 0..=80 {
        for ib in 0..=80 {
            let p = [10f64.powf(-1.0 + 2.0 * ia as f64 / 80.0), 0.1 + 2.9 * ib as f64 / 80.0];
            if cost(p) < cost(best) {
                best = p;
            }
        }
    }
    for _ in 0..5 {
        let mut simplex = [best, [best[0] * 1.05, best[1]], [best[0], best[1] * 1.05]];
        for _ in 0..5000 {
            simplex.sort_by(|a, b| cost(*a).total_cmp(&cost(*b)));
            let [lo, mid, hi] = simplex;
            if (cost(hi) - cost(lo)).abs() <= 1e-18 && (hi[0] - lo[0]).abs() < 1e-12 {
                break;
            }
            let c = [(lo[0] + mid[0]) / 2.0, (lo[1] + mid[1]) / 2.0];
            let at = |t: f64| [c[0] + t * (hi[0] - c[0]), c[1] + t * (hi[1] - c[1])];
            let r = at(-1.0);
            if cost(r) < cost(lo) {
                let e = at(-2.0);
                simplex[2] = if cost(e) < cost(r) { e } else { r };
            } else if cost(r) < cost(mid) {
                simplex[2] = r;
            } else {
                let k = at(0.5);
                if cost(k) < cost(hi) {
                    simplex[2] = k;
                } else {
                    simplex[1] = [(lo[0] + mid[0]) / 2.0, (lo[1] + mid[1]) / 2.0];
                    simplex[2] = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
                }
            }
        }
        simplex.sort_by(|a, b| cost(*a).total_cmp(&cost(*b)));
        best = simplex[0];
    }
    (best[0], best[1])
}

#[test]
fn fit_ab_matches_least_squares_oracle() {
    for min_dist in [0.0001, 0.1] {
        let fit = fit_ab(min_dist, 1.0).unwrap();
        let (a, b) = ab_oracle(min_dist, 1.0);
        assert!((fit.a - a).abs() <= 1e-3 * a, "min_dist {min_dist}: a {} vs {a}", fit.a);
        assert!((fit.b - b).abs() <= 1e-3 * b, "min_dist {min_dist}: b {} vs {b}", fit.b);
        assert!(fit.eval(min_dist) >= 0.9);
    }
    let small = fit_ab(0.0001, 1.0).unwrap();
    assert!(small.residual < 0.01, "{}", small.residual);
}

fn blobs(centers: &[Vec<f64>], per: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (c, ctr) in centers.iter().enumerate() {
        for _ in 0..per {
            for &v in ctr {
                let e: f64 = rng.sample(StandardNormal);
                pts.push(v + e);
            }
            labels.push(c);
        }
    }
    (pts, labels)
}

/// Centers on the coordinate axes scaled so every pair is `sep` apart.
fn axis_centers(k: usize, dim: usize, sep: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let mut v = vec![0.0; dim];
            v[c] = sep / std::f64::consts::SQRT_2;
            v
        })
        .collect()
}

fn purity(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for c in 0..k {
        let mut counts = vec![0usize; k];
        for (p, t) in pred.iter().zip(truth) {
            if *p == c {
                counts[*t] += 1;
            }
        }
        hits += counts.iter().max().unwrap();
    }
    hits as f64 / pred.len() as f64
}

#[test]
fn two_blobs_become_separable() {
    let (pts, labels) = blobs(&axis_centers(2, 16, 10.0), 100, 7);
    let cfg = UmapConfig { n_neighbors: 15, seed: 3, ..Default::default() };
    let (_, layout) = umap_fit(&pts, 16, &cfg).unwrap();
    let km = kmeans(&layout.flat(), 2, KMeansConfig::new(2), 0).unwrap();
    assert_eq!(purity(&km.assignments, &labels, 2), 1.0);
}

#[test]
fn three_blobs_cluster_cleanly() {
    let (pts, labels) = blobs(&axis_centers(3, 16, 8.0), 150, 11);
    let cfg = UmapConfig { n_neighbors: 30, seed: 5, ..Default::default() };
    let (model, layout) = umap_fit(&pts, 16, &cfg).unwrap();
    assert_eq!(model.n_epochs, 500);
    assert!(layout.flat().iter().all(|v| v.is_finite()));
    let km = kmeans(&layout.flat(), 2, KMeansConfig::new(3), 0).unwrap();
    let s = silhouette(&layout.flat(), 2, &km.assignments).unwrap();
    assert!(s > 0.5, "silhouette {s}");
    assert!(purity(&km.assignments, &labels, 3) >= 0.95);
}

#[test]
fn pipeline_is_deterministic_and_dimension_generic() {
    let pts = random_points(120, 44, 9);
    let cfg = UmapConfig { n_neighbors: 10, n_epochs: Some(60), seed: 2, ..Default::default() };
    let (_, a) = umap_fit(&pts, 44, &cfg).unwrap();
    let (_, b) = umap_fit(&pts, 44, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 120);
    let (_, c) = umap_fit(&pts, 44, &UmapConfig { seed: 3, ..cfg }).unwrap();
    assert_ne!(a, c);
    assert!(umap_fit(&pts[..10 * 44], 44, &cfg).is_err());
}

#[test]
fn connected_graph_uses_spectral_init() {
    let pts = random_points(300, 2, 4);
    let cfg = UmapConfig { n_neighbors: 10, n_epochs: Some(20), ..Default::default() };
    let (model, _) = umap_fit(&pts, 2, &cfg).unwrap();
    assert_eq!(model.init, Init::Spectral);
}
