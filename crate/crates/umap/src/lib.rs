//! Uniform manifold approximation and projection to two dimensions.
//!
//! Exact brute-force kNN, smooth-kNN bandwidth calibration, fuzzy set union,
//! fitted low-dimensional curve and a sequential negative-sampling SGD
//! layout. Every stage is deterministic for a fixed seed.

mod curve;
mod graph;
mod io;
mod knn;
mod layout;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use curve::{fit_ab, curve_target, AbFit, FIT_GRID_POINTS};
pub use graph::{fuzzy_union, membership_strengths, smooth_knn, DirectedWeights, FuzzyGraph, SIGMA_BRACKET};
pub use io::{read_layout_csv, write_layout_csv, SourceTag, TaggedLayout};
pub use knn::{knn_exact, Knn};
pub use layout::{optimize_layout, spectral_init, Init, Layout, GRAD_CLIP};

#[derive(Debug, Error)]
pub enum UmapError {
    #[error("invalid UMAP configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("curve fit diverged (residual {residual})")]
    FitDiverged { residual: f64 },
    #[error("layout became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid layout file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, UmapError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UmapConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    /// Only 2 is supported.
    pub n_components: usize,
    /// `None` picks 500 for up to 10,000 points and 200 above.
    pub n_epochs: Option<usize>,
    pub negative_sample_rate: usize,
    pub initial_learning_rate: f64,
    pub seed: u64,
}

impl Default for UmapConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 50,
            min_dist: 0.0001,
            spread: 1.0,
            n_components: 2,
            n_epochs: None,
            negative_sample_rate: 5,
            initial_learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl UmapConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UmapError::Config(m));
        if self.n_neighbors < 2 {
            return bad(format!("n_neighbors must be >= 2, got {}", self.n_neighbors));
        }
        if !(self.min_dist > 0.0 && self.min_dist < self.spread && self.spread.is_finite()) {
            return bad(format!("need 0 < min_dist < spread, got {} and {}", self.min_dist, self.spread));
        }
        if self.n_components != 2 {
            return bad(format!("n_components must be 2, got {}", self.n_components));
        }
        if self.n_epochs == Some(0) {
            return bad("n_epochs must be positive".into());
        }
        if !(self.initial_learning_rate > 0.0 && self.initial_learning_rate.is_finite()) {
            return bad(format!("initial_learning_rate must be positive, got {}", self.initial_learning_rate));
        }
        Ok(())
    }

    pub fn epochs_for(&self, n: usize) -> usize {
        self.n_epochs.unwrap_or(if n <= 10_000 { 500 } else { 200 })
    }
}

/// Everything fitted along the way to a layout.
#[derive(Debug, Clone)]
pub struct UmapModel {
    pub knn: Knn,
    pub graph: FuzzyGraph,
    pub curve: AbFit,
    pub init: Init,
    pub n_epochs: usize,
}

/// kNN graph, calibration, union, curve fit and layout in one call.
pub fn umap_fit(points: &[f64], dim: usize, config: &UmapConfig) -> Result<(UmapModel, Layout)> {
    config.validate()?;
    let knn = knn_exact(points, dim, config.n_neighbors)?;
    let graph = fuzzy_union(&membership_strengths(&knn));
    let curve = fit_ab(config.min_dist, config.spread)?;
    let n_epochs = config.epochs_for(knn.n);
    let (layout, init) = optimize_layout(&graph, curve.a, curve.b, config)?;
    log::info!(
        "umap: {} points, {} edges, a = {:.4}, b = {:.4}, {:?} init, {} epochs",
        knn.n,
        graph.edges.len(),
        curve.a,
        curve.b,
        init,
        n_epochs
    );
    Ok((UmapModel { knn, graph, curve, init, n_epochs }, layout))
}

/// Seeded uniform sample of `n` of `total` indices without replacement,
/// returned in ascending order.
pub fn subsample(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(UmapError::Input(format!("cannot draw {n} of {total} items")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, total, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn config_validation() {
        assert!(UmapConfig::default().validate().is_ok());
        for c in [
            UmapConfig { n_neighbors: 1, ..Default::default() },
            UmapConfig { min_dist: 1.0, ..Default::default() },
            UmapConfig { min_dist: 0.0, ..Default::default() },
            UmapConfig { n_components: 3, ..Default::default() },
            UmapConfig { n_epochs: Some(0), ..Default::default() },
            UmapConfig { initial_learning_rate: -1.0, ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let c = UmapConfig::default();
        assert_eq!(c.epochs_for(10_000), 500);
        assert_eq!(c.epochs_for(10_001), 200);
        assert_eq!(UmapConfig { n_epochs: Some(7), ..c }.epochs_for(5), 7);
    }

    #[test]
    fn subsample_contract() {
        let all = subsample(50, 50, 3).unwrap();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        let a = subsample(1000, 100, 9).unwrap();
        assert_eq!(a, subsample(1000, 100, 9).unwrap());
        assert_ne!(a, subsample(1000, 100, 10).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(subsample(10, 11, 0).is_err());
    }

    #[test]
    fn subsample_mean_within_three_standard_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..20_000).map(|_| rng.random_range(0.0..10.0)).collect();
        let n = 2000;
        let full_mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - full_mean).powi(2)).sum::<f64>() / values.len() as f64;
        // Finite-population correction.
        let se = (var / n as f64 * (1.0 - n as f64 / values.len() as f64)).sqrt();
        for seed in 0..5 {
            let idx = subsample(values.len(), n, seed).unwrap();
            let m = idx.iter().map(|&i| values[i]).sum::<f64>() / n as f64;
            assert!((m - full_mean).abs() < 3.0 * se, "seed {seed}: {m} vs {full_mean}");
        }
    }
}
