//! Reconstruction metrics, density grids and cluster-quality measures.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::supersegment::{destandardize_values, SuperSegmentSet};
use crate::training::TrainedModel;
use crate::{Error, Result, FEATURE_NAMES, N_FEATURES};

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(format!("rmse: {} vs {} values", pred.len(), truth.len())));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.len() < 2 {
        return Err(Error::Shape(format!("r2: {} vs {} values (need >= 2)", pred.len(), truth.len())));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let sst: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if sst == 0.0 {
        return Err(Error::Undefined("r2 of a constant truth vector is undefined".into()));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - sse / sst)
}

/// Per-feature reconstruction quality in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMetrics {
    pub rmse: [f64; N_FEATURES],
    pub r2: [f64; N_FEATURES],
    pub n_samples: usize,
}

impl FeatureMetrics {
    /// `key = value` lines, one per feature and metric.
    pub fn write_report<W: Write>(&self, mut w: W, label: &str) -> Result<()> {
        writeln!(w, "[{label}]")?;
        writeln!(w, "n_samples = {}", self.n_samples)?;
        for (f, name) in FEATURE_NAMES.iter().enumerate() {
            writeln!(w, "{name}.rmse = {:.9e}", self.rmse[f])?;
            writeln!(w, "{name}.r2 = {:.9}", self.r2[f])?;
        }
        Ok(())
    }

    pub fn csv_rows(&self, label: &str) -> Vec<[String; 4]> {
        FEATURE_NAMES
            .iter()
            .enumerate()
            .map(|(f, name)| {
                [label.to_string(), name.to_string(), format!("{:.9e}", self.rmse[f]), format!("{:.9}", self.r2[f])]
            })
            .collect()
    }
}

/// Inference-mode reconstruction of a standardized set, scored per feature
/// over every sample and time step after de-standardization.
pub fn evaluate_reconstruction(model: &TrainedModel, set: &SuperSegmentSet) -> Result<FeatureMetrics> {
    match set.stats {
        Some(s) if s == model.stats => {}
        Some(_) => return Err(Error::Data("set and model use different feature statistics".into())),
        None => return Err(Error::Data("set must be standardized with the model's statistics".into())),
    }
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate an empty set".into()));
    }
    let mut truth = set.flat_values();
    let mut recon = model.net.reconstruct_batch(&truth, 1024)?;
    destandardize_values(&mut truth, &model.stats);
    destandardize_values(&mut recon, &model.stats);
    let mut out = FeatureMetrics { rmse: [0.0; N_FEATURES], r2: [0.0; N_FEATURES], n_samples: set.len() };
    for f in 0..N_FEATURES {
        let t: Vec<f64> = truth.iter().skip(f).step_by(N_FEATURES).copied().collect();
        let p: Vec<f64> = recon.iter().skip(f).step_by(N_FEATURES).copied().collect();
        out.rmse[f] = rmse(&p, &t)?;
        out.r2[f] = r2(&p, &t)?;
    }
    Ok(out)
}

/// 2-D histogram over the bounding box of the points.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub nx: usize,
    pub ny: usize,
    /// Row-major `ny x nx`; row 0 is the lowest y band.
    pub counts: Vec<u64>,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl DensityGrid {
    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.nx + ix]
    }

    /// Count matrix as CSV. The header holds the lower x edge of each
    /// column, the first field of each row the lower y edge of that row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let dx = (self.x_range.1 - self.x_range.0) / self.nx as f64;
        let dy = (self.y_range.1 - self.y_range.0) / self.ny as f64;
        let mut header = vec!["y_lower/x_lower".to_string()];
        header.extend((0..self.nx).map(|ix| (self.x_range.0 + dx * ix as f64).to_string()));
        w.write_record(&header)?;
        for iy in 0..self.ny {
            let mut row = vec![(self.y_range.0 + dy * iy as f64).to_string()];
            row.extend((0..self.nx).map(|ix| self.count(ix, iy).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Equal-width histogram of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub range: (f64, f64),
    pub counts: Vec<u64>,
}

/// Per-feature value distributions of a set, in the set's own units.
pub fn feature_histograms(set: &SuperSegmentSet, bins: usize) -> Result<Vec<Histogram>> {
    if set.is_empty() || bins == 0 {
        return Err(Error::Shape("histograms need samples and at least one bin".into()));
    }
    let values = set.flat_values();
    Ok((0..N_FEATURES)
        .map(|f| {
            let range = extent(values.iter().skip(f).step_by(N_FEATURES).copied());
            let mut counts = vec![0u64; bins];
            for v in values.iter().skip(f).step_by(N_FEATURES) {
                counts[bin(*v, range, bins)] += 1;
            }
            Histogram { range, counts }
        })
        .collect())
}

/// Long-format CSV `label,feature,bin_lower,bin_upper,count`.
pub fn write_histograms_csv<W: Write>(w: W, groups: &[(&str, &[Histogram])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["label", "feature", "bin_lower", "bin_upper", "count"])?;
    for (label, hists) in groups {
        for (h, name) in hists.iter().zip(FEATURE_NAMES) {
            let width = (h.range.1 - h.range.0) / h.counts.len() as f64;
            for (i, c) in h.counts.iter().enumerate() {
                let lo = h.range.0 + width * i as f64;
                w.write_record([label.to_string(), name.to_string(), lo.to_string(), (lo + width).to_string(), c.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn extent(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn bin(v: f64, range: (f64, f64), n: usize) -> usize {
    let b = ((v - range.0) / (range.1 - range.0) * n as f64).floor();
    (b.max(0.0) as usize).min(n - 1)
}

pub fn density_grid(points: &[[f64; 2]], nx: usize, ny: usize) -> Result<DensityGrid> {
    if points.is_empty() || nx == 0 || ny == 0 {
        return Err(Error::Shape("density grid needs points and non-zero bins".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density grid input".into()));
    }
    let x_range = extent(points.iter().map(|p| p[0]));
    let y_range = extent(points.iter().map(|p| p[1]));
    let mut counts = vec![0u64; nx * ny];
    for p in points {
        counts[bin(p[1], y_range, ny) * nx + bin(p[0], x_range, nx)] += 1;
    }
    Ok(DensityGrid { nx, ny, counts, x_range, y_range })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    /// Independent k-means++ restarts; the lowest final inertia wins.
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop once no center moves farther than this.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self { k, n_init: 10, max_iter: 300, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// `k x dim`, row-major.
    pub centers: Vec<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning run.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

/// Seeded k-means on `n x dim` row-major points.
pub fn kmeans(points: &[f64], dim: usize, config: KMeansConfig, seed: u64) -> Result<KMeansResult> {
    if config.k < 1 || config.n_init < 1 || config.max_iter < 1 {
        return Err(Error::Config(format!("invalid k-means configuration {config:?}")));
    }
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("{} values are not rows of width {dim}", points.len())));
    }
    let n = points.len() / dim;
    if n < config.k {
        return Err(Error::Config(format!("k-means needs at least k = {} points, got {n}", config.k)));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..config.n_init {
        let run = lloyd(points, dim, n, config, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn kmeans_pp(points: &[f64], dim: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = row(rng.random_range(0..n)).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centers.extend(c);
    }
    centers
}

fn lloyd(points: &[f64], dim: usize, n: usize, cfg: KMeansConfig, rng: &mut ChaCha8Rng) -> KMeansResult {
    let k = cfg.k;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = kmeans_pp(points, dim, n, k, rng);
    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut inertia = 0.0;
        let mut own_d2 = vec![0.0; n];
        for i in 0..n {
            let (mut bc, mut bd) = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(row(i), &centers[c * dim..(c + 1) * dim]);
                if d < bd {
                    bc = c;
                    bd = d;
                }
            }
            assignments[i] = bc;
            own_d2[i] = bd;
            inertia += bd;
        }
        history.push(inertia);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)).for_each(|(s, v)| *s += v);
        }
        let mut moved: f64 = 0.0;
        let mut new_centers = centers.clone();
        for c in 0..k {
            let nc = &mut new_centers[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                // Re-seed at the point farthest from its center.
                let far = (0..n).max_by(|&a, &b| own_d2[a].total_cmp(&own_d2[b])).unwrap();
                nc.copy_from_slice(row(far));
                own_d2[far] = 0.0;
            } else {
                nc.iter_mut().zip(&sums[c * dim..(c + 1) * dim]).for_each(|(x, s)| *x = s / counts[c] as f64);
            }
            moved = moved.max(dist(nc, &centers[c * dim..(c + 1) * dim]));
        }
        centers = new_centers;
        if moved < cfg.tol || iterations >= cfg.max_iter {
            break;
        }
    }
    // Final assignment against the final centers.
    let mut inertia = 0.0;
    for i in 0..n {
        let (mut bc, mut bd) = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(row(i), &centers[c * dim..(c + 1) * dim]);
            if d < bd {
                bc = c;
                bd = d;
            }
        }
        assignments[i] = bc;
        inertia += bd;
    }
    history.push(inertia);
    KMeansResult { assignments, centers, inertia, inertia_history: history, iterations }
}

fn check_labels(points: &[f64], dim: usize, labels: &[usize]) -> Result<usize> {
    if dim == 0 || points.len() != labels.len() * dim {
        return Err(Error::Shape("points and assignments disagree".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut used = vec![false; k];
    labels.iter().for_each(|&l| used[l] = true);
    if used.iter().filter(|&&u| u).count() < 2 {
        return Err(Error::Undefined("at least two non-empty clusters are required".into()));
    }
    Ok(k)
}

/// Mean silhouette. Singleton clusters score 0, as does any point whose
/// `a` and `b` are both zero.
pub fn silhouette(points: &[f64], dim: usize, labels: &[usize]) -> Result<f64> {
    let k = check_labels(points, dim, labels)?;
    let n = labels.len();
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist(row(i), row(j));
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Mean distance over all within-cluster pairs divided by the mean distance
/// over all pairs.
pub fn compactness_ratio(points: &[f64], dim: usize, labels: &[usize]) -> Result<f64> {
    check_labels(points, dim, labels)?;
    let n = labels.len();
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let (mut within, mut n_within, mut all) = (0.0, 0usize, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(row(i), row(j));
            all += d;
            if labels[i] == labels[j] {
                within += d;
                n_within += 1;
            }
        }
    }
    let n_pairs = n * (n - 1) / 2;
    if all == 0.0 {
        return Err(Error::Undefined("all points coincide".into()));
    }
    if n_within == 0 {
        return Ok(0.0);
    }
    Ok((within / n_within as f64) / (all / n_pairs as f64))
}

/// Cluster quality of one 2-D (or higher) point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeCompactness {
    pub scheme: String,
    pub assignments: Vec<usize>,
    pub silhouette: f64,
    pub compactness_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactnessReport {
    pub k: usize,
    pub seed: u64,
    pub schemes: Vec<SchemeCompactness>,
}

impl CompactnessReport {
    pub fn get(&self, scheme: &str) -> Option<&SchemeCompactness> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }

    pub fn write_report<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "[compactness]")?;
        writeln!(w, "k = {}", self.k)?;
        writeln!(w, "seed = {}", self.seed)?;
        for s in &self.schemes {
            writeln!(w, "{}.silhouette = {:.9}", s.scheme, s.silhouette)?;
            writeln!(w, "{}.compactness_ratio = {:.9}", s.scheme, s.compactness_ratio)?;
        }
        Ok(())
    }
}

/// k-means on each scheme's points, then silhouette and compactness ratio
/// of the resulting partition.
pub fn compactness_report(schemes: &[(&str, &[f64])], dim: usize, k: usize, seed: u64) -> Result<CompactnessReport> {
    let mut out = CompactnessReport { k, seed, schemes: Vec::new() };
    for (name, points) in schemes {
        let km = kmeans(points, dim, KMeansConfig::new(k), seed)?;
        out.schemes.push(SchemeCompactness {
            scheme: name.to_string(),
            silhouette: silhouette(points, dim, &km.assignments)?,
            compactness_ratio: compactness_ratio(points, dim, &km.assignments)?,
            assignments: km.assignments,
        });
    }
    Ok(out)
}
