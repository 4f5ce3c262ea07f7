use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::FuzzyGraph;
use crate::{Result, UmapConfig, UmapError};

/// Per-coordinate bound on every SGD gradient.
pub const GRAD_CLIP: f64 = 4.0;
const INIT_EXTENT: f64 = 10.0;
const SPECTRAL_MAX_ITER: usize = 3000;
const SPECTRAL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub coords: Vec<[f64; 2]>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Row-major `n x 2` copy.
    pub fn flat(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Spectral,
    Random,
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

fn n_components(graph: &FuzzyGraph) -> usize {
    let mut parent: Vec<usize> = (0..graph.n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut count = graph.n;
    for &(i, j, _) in &graph.edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
            count -= 1;
        }
    }
    count
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Orthonormalizes two vectors against `v0` and each other.
fn orthonormalize(x: &mut [Vec<f64>; 2], v0: &[f64]) -> bool {
    for c in 0..2 {
        let p = dot(&x[c], v0);
        axpy(&mut x[c], -p, v0);
        if c == 1 {
            let (a, b) = x.split_at_mut(1);
            let p = dot(&b[0], &a[0]);
            axpy(&mut b[0], -p, &a[0]);
        }
        let norm = dot(&x[c], &x[c]).sqrt();
        if !(norm > 1e-300) {
            return false;
        }
        x[c].iter_mut().for_each(|v| *v /= norm);
    }
    true
}

/// Symmetric 2x2 eigen-decomposition, eigenvalues descending.
fn eig2(h00: f64, h01: f64, h11: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mean = 0.5 * (h00 + h11);
    let r = (0.25 * (h00 - h11).powi(2) + h01 * h01).sqrt();
    let theta = 0.5 * (2.0 * h01).atan2(h00 - h11);
    let (s, c) = theta.sin_cos();
    ([mean + r, mean - r], [[c, -s], [s, c]])
}

/// Two leading non-trivial eigenvectors of the normalized graph Laplacian,
/// scaled so the largest coordinate magnitude is 10. Returns `None` for
/// disconnected or tiny graphs and when subspace iteration does not converge.
pub fn spectral_init(graph: &FuzzyGraph, rng: &mut ChaCha8Rng) -> Option<Vec<[f64; 2]>> {
    let n = graph.n;
    if n < 4 {
        return None;
    }
    let comps = n_components(graph);
    if comps > 1 {
        log::info!("spectral init skipped: graph has {comps} components");
        return None;
    }
    let mut deg = vec![0.0; n];
    for &(i, _, w) in &graph.edges {
        deg[i] += w;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let norm0 = deg.iter().sum::<f64>().sqrt();
    let v0: Vec<f64> = deg.iter().map(|d| d.sqrt() / norm0).collect();
    // (I + D^-1/2 W D^-1/2) / 2 has the same eigenvectors with spectrum in [0, 1].
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        for &(i, j, w) in &graph.edges {
            y[i] += 0.5 * w * inv_sqrt[i] * inv_sqrt[j] * x[j];
        }
        y
    };
    let mut x = [0, 1].map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
    if !orthonormalize(&mut x, &v0) {
        return None;
    }
    for _ in 0..SPECTRAL_MAX_ITER {
        let mut z = [apply(&x[0]), apply(&x[1])];
        let (h00, h01, h11) = (dot(&x[0], &z[0]), dot(&x[0], &z[1]), dot(&x[1], &z[1]));
        let (theta, v) = eig2(h00, h01, h11);
        let rot = |m: &[Vec<f64>; 2]| -> [Vec<f64>; 2] {
            [0, 1].map(|k| m[0].iter().zip(&m[1]).map(|(a, b)| v[0][k] * a + v[1][k] * b).collect())
        };
        x = rot(&x);
        z = rot(&z);
        let resid = (0..2)
            .map(|k| z[k].iter().zip(&x[k]).map(|(zi, xi)| (zi - theta[k] * xi).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if resid < SPECTRAL_TOL {
            let max = x.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            if !(max > 0.0) {
                return None;
            }
            let scale = INIT_EXTENT / max;
            return Some(
                (0..n)
                    .map(|i| {
                        [
                            x[0][i] * scale + rng.random_range(-1e-4..1e-4),
                            x[1][i] * scale + rng.random_range(-1e-4..1e-4),
                        ]
                    })
                    .collect(),
            );
        }
        x = z;
        if !orthonormalize(&mut x, &v0) {
            return None;
        }
    }
    log::info!("spectral init did not converge in {SPECTRAL_MAX_ITER} iterations");
    None
}

/// Sequential negative-sampling SGD over the fuzzy graph.
pub fn optimize_layout(graph: &FuzzyGraph, a: f64, b: f64, config: &UmapConfig) -> Result<(Layout, Init)> {
    config.validate()?;
    let n = graph.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut coords, init) = match spectral_init(graph, &mut rng) {
        Some(c) => (c, Init::Spectral),
        None => {
            log::info!("using seeded uniform initialization");
            let c = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-INIT_EXTENT..INIT_EXTENT),
                        rng.random_range(-INIT_EXTENT..INIT_EXTENT),
                    ]
                })
                .collect();
            (c, Init::Random)
        }
    };

    let n_epochs = config.epochs_for(n);
    let max_w = graph.edges.iter().fold(0.0f64, |m, e| m.max(e.2));
    let per_sample: Vec<f64> = graph.edges.iter().map(|e| max_w / e.2).collect();
    let per_negative: Vec<f64> = per_sample.iter().map(|p| p / config.negative_sample_rate as f64).collect();
    let mut next = per_sample.clone();
    let mut next_negative = per_negative.clone();

    for epoch in 0..n_epochs {
        let alpha = config.initial_learning_rate * (1.0 - epoch as f64 / n_epochs as f64);
        let now = epoch as f64;
        for (e, &(i, j, _)) in graph.edges.iter().enumerate() {
            if next[e] > now {
                continue;
            }
            let d2 = (coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2);
            if d2 > 0.0 {
                let pb = d2.powf(b);
                let coeff = -2.0 * a * b * (pb / d2) / (a * pb + 1.0);
                for d in 0..2 {
                    let g = clip(coeff * (coords[i][d] - coords[j][d]));
                    coords[i][d] += g * alpha;
                    coords[j][d] -= g * alpha;
                }
            }
            next[e] += per_sample[e];

            let n_neg = if config.negative_sample_rate == 0 {
                0
            } else {
                ((now - next_negative[e]) / per_negative[e]).max(0.0) as usize
            };
            for _ in 0..n_neg {
                let k = rng.random_range(0..n);
                if k == i {
                    continue;
                }
                let d2 = (coords[i][0] - coords[k][0]).powi(2) + (coords[i][1] - coords[k][1]).powi(2);
                if d2 > 0.0 {
                    let coeff = 2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0));
                    for d in 0..2 {
                        coords[i][d] += clip(coeff * (coords[i][d] - coords[k][d])) * alpha;
                    }
                }
            }
            next_negative[e] += n_neg as f64 * per_negative[e];
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(UmapError::NonFinite { epoch: epoch + 1 });
        }
    }
    Ok((Layout { coords }, init))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_bounds() {
        assert_eq!(clip(1e9), GRAD_CLIP);
        assert_eq!(clip(-1e9), -GRAD_CLIP);
        assert_eq!(clip(0.5), 0.5);
    }

    #[test]
    fn eig2_reconstructs() {
        let (t, v) = eig2(2.0, 0.7, -1.0);
        assert!(t[0] >= t[1]);
        for k in 0..2 {
            let (x, y) = (v[0][k], v[1][k]);
            assert!((2.0 * x + 0.7 * y - t[k] * x).abs() < 1e-12);
            assert!((0.7 * x - 1.0 * y - t[k] * y).abs() < 1e-12);
        }
    }

    fn ring(n: usize) -> FuzzyGraph {
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, (i + 1) % n, 1.0));
            edges.push(((i + 1) % n, i, 1.0));
        }
        edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        FuzzyGraph { n, edges, ..FuzzyGraph::empty(n) }
    }

    #[test]
    fn spectral_ring_is_a_circle() {
        // The second and third Laplacian eigenvectors of a cycle are cos/sin.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = spectral_init(&ring(40), &mut rng).unwrap();
        let radii: Vec<f64> = c.iter().map(|p| p[0].hypot(p[1])).collect();
        let (lo, hi) = radii.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
        assert!(hi - lo < 0.05 * hi, "{lo} {hi}");
    }

    #[test]
    fn spectral_falls_back_when_disconnected() {
        let mut g = ring(10);
        g.edges.retain(|e| !((e.0 == 0 && e.1 == 9) || (e.0 == 9 && e.1 == 0) || (e.0 == 4 && e.1 == 5) || (e.0 == 5 && e.1 == 4)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(spectral_init(&g, &mut rng).is_none());
        let (_, init) = optimize_layout(&g, 1.0, 1.0, &UmapConfig { n_epochs: Some(5), ..Default::default() }).unwrap();
        assert_eq!(init, Init::Random);
    }

    #[test]
    fn single_point_keeps_initialization() {
        let g = FuzzyGraph::empty(1);
        let cfg = UmapConfig::default();
        let (layout, init) = optimize_layout(&g, 1.9, 0.8, &cfg).unwrap();
        assert_eq!(init, Init::Random);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let want = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        assert_eq!(layout.coords, vec![want]);
    }

    #[test]
    fn deterministic_and_finite() {
        let cfg = UmapConfig { n_epochs: Some(50), seed: 4, ..Default::default() };
        let a = optimize_layout(&ring(30), 1.9, 0.8, &cfg).unwrap();
        let b = optimize_layout(&ring(30), 1.9, 0.8, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1, Init::Spectral);
        assert!(a.0.flat().iter().all(|v| v.is_finite()));
    }
}
