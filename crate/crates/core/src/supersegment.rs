//! Fixed-length topographic windows interpolated from variable-spacing
//! segments, plus per-feature standardization.
//!
//! A window is centered on every original segment and sampled at
//! `center + {-50, -40, ..., +50}` m by piecewise-linear interpolation in
//! along-track distance. A window is discarded when it would need
//! extrapolation past either end of the track, or when any gap between
//! consecutive original segments that overlaps the window exceeds 50 m.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::track::{Split, Track};
use crate::{Error, Result, FEATURE_NAMES, N_FEATURES};

/// Grid points per window.
pub const WINDOW_LEN: usize = 11;
/// Grid spacing in meters.
pub const GRID_SPACING: f64 = 10.0;
/// Half the window span in meters.
pub const HALF_SPAN: f64 = 50.0;
/// Largest tolerated gap between consecutive segments inside a window.
pub const MAX_GAP: f64 = 50.0;
/// Slack for the no-extrapolation test, absorbing rounding in `center +/- 50`.
pub const EDGE_TOL: f64 = 1e-6;
/// Values per window.
pub const WINDOW_VALUES: usize = WINDOW_LEN * N_FEATURES;

/// Offset of grid point `k` from the window center.
pub fn grid_offset(k: usize) -> f64 {
    (k as f64 - (WINDOW_LEN / 2) as f64) * GRID_SPACING
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperSegment {
    pub track_id: Arc<str>,
    pub center_distance: f64,
    /// Row-major `WINDOW_LEN x N_FEATURES`.
    pub values: [f64; WINDOW_VALUES],
}

impl SuperSegment {
    pub fn value(&self, step: usize, feature: usize) -> f64 {
        self.values[step * N_FEATURES + feature]
    }
}

/// Interpolated windows for one track, in order of their center segment.
pub fn build_supersegments(track: &Track) -> Vec<SuperSegment> {
    let segs = track.segments();
    let dist: Vec<f64> = segs.iter().map(|s| s.distance).collect();
    let feats: Vec<[f64; N_FEATURES]> = segs.iter().map(|s| s.features()).collect();
    let first = dist[0];
    let last = dist[dist.len() - 1];
    let id: Arc<str> = Arc::from(track.id());

    let mut out = Vec::new();
    for &center in &dist {
        let lo = center - HALF_SPAN;
        let hi = center + HALF_SPAN;
        if lo < first - EDGE_TOL || hi > last + EDGE_TOL {
            continue;
        }
        // Pairs (j, j+1) with d[j+1] > lo and d[j] < hi overlap the window.
        let start = dist.partition_point(|&d| d <= lo).saturating_sub(1);
        let end = dist.partition_point(|&d| d < hi);
        let gap_too_wide = (start..end.min(dist.len() - 1))
            .any(|j| dist[j + 1] - dist[j] > MAX_GAP);
        if gap_too_wide {
            continue;
        }

        let mut values = [0.0; WINDOW_VALUES];
        for k in 0..WINDOW_LEN {
            let x = center + grid_offset(k);
            let row = &mut values[k * N_FEATURES..(k + 1) * N_FEATURES];
            // j is the last knot at or before x, so t = 0 exactly on a knot.
            let j = dist.partition_point(|&d| d <= x).max(1) - 1;
            if j + 1 == dist.len() {
                row.copy_from_slice(&feats[j]);
                continue;
            }
            let t = ((x - dist[j]) / (dist[j + 1] - dist[j])).max(0.0);
            for f in 0..N_FEATURES {
                row[f] = feats[j][f] + (feats[j + 1][f] - feats[j][f]) * t;
            }
        }
        out.push(SuperSegment { track_id: id.clone(), center_distance: center, values });
    }
    out
}

/// Per-feature standardization statistics (population std).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl FeatureStats {
    pub fn validate(&self) -> Result<()> {
        for f in 0..N_FEATURES {
            if !self.mean[f].is_finite() || !self.std[f].is_finite() || self.std[f] <= 0.0 {
                return Err(Error::Data(format!(
                    "feature {} has invalid statistics (mean {}, std {})",
                    FEATURE_NAMES[f], self.mean[f], self.std[f]
                )));
            }
        }
        Ok(())
    }
}

/// Which split a set of windows came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unsplit,
}

impl From<Split> for SplitTag {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitTag::Train,
            Split::Val => SplitTag::Val,
            Split::Test => SplitTag::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperSegmentSet {
    pub samples: Vec<SuperSegment>,
    /// Present iff the values are standardized.
    pub stats: Option<FeatureStats>,
    pub split: SplitTag,
}

impl SuperSegmentSet {
    pub fn new(samples: Vec<SuperSegment>, split: SplitTag) -> Self {
        Self { samples, stats: None, split }
    }

    /// Windows of all tracks, concatenated in track order.
    pub fn from_tracks<'a>(tracks: impl IntoIterator<Item = &'a Track>, split: SplitTag) -> Self {
        let samples = tracks.into_iter().flat_map(build_supersegments).collect();
        Self::new(samples, split)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_standardized(&self) -> bool {
        self.stats.is_some()
    }

    /// All window values as one row-major `len x WINDOW_VALUES` buffer.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * WINDOW_VALUES);
        for s in &self.samples {
            out.extend_from_slice(&s.values);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            stats: self.stats,
            split: self.split,
        }
    }
}

/// Mean and population std of each feature over all samples and time steps.
pub fn compute_stats(set: &SuperSegmentSet) -> Result<FeatureStats> {
    if set.is_empty() {
        return Err(Error::Data("cannot compute statistics of an empty set".into()));
    }
    // Welford per feature.
    let mut count = 0.0;
    let mut mean = [0.0; N_FEATURES];
    let mut m2 = [0.0; N_FEATURES];
    for s in &set.samples {
        for row in s.values.chunks_exact(N_FEATURES) {
            count += 1.0;
            for f in 0..N_FEATURES {
                let delta = row[f] - mean[f];
                mean[f] += delta / count;
                m2[f] += delta * (row[f] - mean[f]);
            }
        }
    }
    let mut std = [0.0; N_FEATURES];
    for f in 0..N_FEATURES {
        std[f] = (m2[f] / count).sqrt();
        if std[f] == 0.0 {
            return Err(Error::Data(format!(
                "feature {} has zero variance in the training split",
                FEATURE_NAMES[f]
            )));
        }
    }
    Ok(FeatureStats { mean, std })
}

pub fn standardize(mut set: SuperSegmentSet, stats: &FeatureStats) -> Result<SuperSegmentSet> {
    if set.is_standardized() {
        return Err(Error::Data("set is already standardized".into()));
    }
    stats.validate()?;
    for s in &mut set.samples {
        for row in s.values.chunks_exact_mut(N_FEATURES) {
            for f in 0..N_FEATURES {
                row[f] = (row[f] - stats.mean[f]) / stats.std[f];
            }
        }
    }
    set.stats = Some(*stats);
    Ok(set)
}

pub fn destandardize(mut set: SuperSegmentSet) -> Result<SuperSegmentSet> {
    let stats = set
        .stats
        .take()
        .ok_or_else(|| Error::Data("set is not standardized".into()))?;
    for s in &mut set.samples {
        destandardize_values(&mut s.values, &stats);
    }
    Ok(set)
}

/// In-place inverse standardization of row-major `... x N_FEATURES` values.
pub fn destandardize_values(values: &mut [f64], stats: &FeatureStats) {
    for row in values.chunks_exact_mut(N_FEATURES) {
        for f in 0..N_FEATURES {
            row[f] = row[f] * stats.std[f] + stats.mean[f];
        }
    }
}

const SSEG_MAGIC: &[u8; 4] = b"SSEG";
const SSEG_VERSION: u32 = 1;

/// Writes the binary window format. Values are stored as `f32`.
pub fn write_sseg<W: Write>(mut w: W, set: &SuperSegmentSet) -> Result<()> {
    let mut ids: Vec<Arc<str>> = Vec::new();
    let mut index: HashMap<Arc<str>, u32> = HashMap::new();
    for s in &set.samples {
        if !index.contains_key(&s.track_id) {
            index.insert(s.track_id.clone(), ids.len() as u32);
            ids.push(s.track_id.clone());
        }
    }
    let mut buf = Vec::with_capacity(64 + set.len() * (12 + 4 * WINDOW_VALUES));
    buf.extend_from_slice(SSEG_MAGIC);
    buf.extend_from_slice(&SSEG_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    for id in &ids {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    buf.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for s in &set.samples {
        buf.extend_from_slice(&index[&s.track_id].to_le_bytes());
        buf.extend_from_slice(&s.center_distance.to_le_bytes());
        for v in &s.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated super-segment file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_sseg<R: Read>(mut r: R, split: SplitTag) -> Result<SuperSegmentSet> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut rd = ByteReader { buf: &buf, pos: 0 };
    if rd.take(4)? != SSEG_MAGIC {
        return Err(Error::Format("bad magic, expected SSEG".into()));
    }
    let version = rd.u32()?;
    if version != SSEG_VERSION {
        return Err(Error::Format(format!("unsupported SSEG version {version}")));
    }
    let n_ids = rd.u32()? as usize;
    let mut ids = Vec::with_capacity(n_ids);
    for _ in 0..n_ids {
        let len = rd.u32()? as usize;
        let s = std::str::from_utf8(rd.take(len)?)
            .map_err(|_| Error::Format("track id is not UTF-8".into()))?;
        ids.push(Arc::<str>::from(s));
    }
    let n = rd.u64()? as usize;
    let mut samples = Vec::with_capacity(n.min(buf.len() / (12 + 4 * WINDOW_VALUES) + 1));
    for _ in 0..n {
        let idx = rd.u32()? as usize;
        let track_id = ids
            .get(idx)
            .cloned()
            .ok_or_else(|| Error::Format(format!("track index {idx} out of range")))?;
        let center_distance = rd.f64()?;
        let mut values = [0.0; WINDOW_VALUES];
        for v in &mut values {
            *v = rd.f32()? as f64;
        }
        samples.push(SuperSegment { track_id, center_distance, values });
    }
    if rd.pos != buf.len() {
        return Err(Error::Format("trailing bytes after super-segment records".into()));
    }
    Ok(SuperSegmentSet::new(samples, split))
}

/// Debug mirror: one row per window, columns `<feature>_t<k>`.
pub fn write_sseg_csv<W: Write>(w: W, set: &SuperSegmentSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["track_id".to_string(), "center_distance_m".to_string()];
    for k in 0..WINDOW_LEN {
        for name in FEATURE_NAMES {
            header.push(format!("{name}_t{k}"));
        }
    }
    w.write_record(&header)?;
    for s in &set.samples {
        let mut row = vec![s.track_id.to_string(), s.center_distance.to_string()];
        row.extend(s.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
