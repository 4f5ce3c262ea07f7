//! Along-track segments, CSV ingestion and the track-exclusive split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, N_FEATURES};

/// One aggregated altimetry segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// Along-track distance in meters.
    pub distance: f64,
    pub height: f64,
    pub photon_rate: f64,
    pub background_rate: f64,
    /// Pulse count, kept real so it can be interpolated.
    pub n_pulses: f64,
}

impl Segment {
    pub fn features(&self) -> [f64; N_FEATURES] {
        [self.height, self.photon_rate, self.background_rate, self.n_pulses]
    }

    pub fn is_finite(&self) -> bool {
        self.distance.is_finite() && self.features().iter().all(|v| v.is_finite())
    }
}

/// One along-track pass. Segments are strictly increasing in distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    id: String,
    segments: Vec<Segment>,
}

impl Track {
    pub fn new(id: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let id = id.into();
        if segments.len() < 2 {
            return Err(Error::Data(format!(
                "track {id:?} has {} segment(s), need at least 2",
                segments.len()
            )));
        }
        if let Some(s) = segments.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "track {id:?} segment at {} m",
                s.distance
            )));
        }
        if segments[0].distance < 0.0 {
            return Err(Error::Data(format!("track {id:?} has negative distance")));
        }
        if let Some(w) = segments.windows(2).find(|w| w[1].distance <= w[0].distance) {
            return Err(Error::Data(format!(
                "track {id:?} distances not strictly increasing at {} m",
                w[1].distance
            )));
        }
        Ok(Self { id, segments })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Tracks keyed by unique id, in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct TrackCollection {
    pub tracks: Vec<Track>,
    /// Rows discarded during ingestion because a field was non-finite.
    pub dropped_rows: usize,
}

impl TrackCollection {
    pub fn new(tracks: Vec<Track>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tracks {
            if !seen.insert(t.id()) {
                return Err(Error::Data(format!("duplicate track id {:?}", t.id())));
            }
        }
        Ok(Self { tracks, dropped_rows: 0 })
    }

    pub fn ids(&self) -> Vec<String> {
        self.tracks.iter().map(|t| t.id().to_string()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id() == id)
    }

    pub fn n_segments(&self) -> usize {
        self.tracks.iter().map(Track::len).sum()
    }
}

/// Header names used to locate each field in a track CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub track_id: String,
    pub distance: String,
    pub height: String,
    pub photon_rate: String,
    pub background_rate: String,
    pub n_pulses: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            track_id: "track_id".into(),
            distance: "distance_m".into(),
            height: "height_m".into(),
            photon_rate: "photon_rate".into(),
            background_rate: "background_rate".into(),
            n_pulses: "n_pulses".into(),
        }
    }
}

impl ColumnMap {
    fn names(&self) -> [&str; 6] {
        [
            &self.track_id,
            &self.distance,
            &self.height,
            &self.photon_rate,
            &self.background_rate,
            &self.n_pulses,
        ]
    }
}

/// Header written by [`write_tracks`].
pub const TRACK_CSV_HEADER: [&str; 6] = [
    "track_id",
    "distance_m",
    "height_m",
    "photon_rate",
    "background_rate",
    "n_pulses",
];

pub fn ingest_tracks(path: impl AsRef<Path>, column_map: &ColumnMap) -> Result<TrackCollection> {
    let file = File::open(path.as_ref())?;
    read_tracks(file, column_map)
}

/// Parses a track CSV. Lines starting with `#` are comments.
///
/// Rows with any non-finite numeric field are dropped and counted in
/// [`TrackCollection::dropped_rows`]; a repeated `(track_id, distance)` pair is
/// a data error.
pub fn read_tracks<R: Read>(reader: R, column_map: &ColumnMap) -> Result<TrackCollection> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(column_map.names()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing column {name:?}")))?;
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(Segment, u64)>> = HashMap::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let mut vals = [0.0f64; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let raw = field(k + 1);
            *v = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}: column {:?} value {raw:?} is not a number",
                    column_map.names()[k + 1]
                ))
            })?;
        }
        let seg = Segment {
            distance: vals[0],
            height: vals[1],
            photon_rate: vals[2],
            background_rate: vals[3],
            n_pulses: vals[4],
        };
        if !seg.is_finite() {
            dropped += 1;
            continue;
        }
        let id = field(0).to_string();
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        entry.push((seg, line));
    }

    let mut tracks = Vec::with_capacity(order.len());
    for id in order {
        let mut segs = rows.remove(&id).unwrap_or_default();
        segs.sort_by(|a, b| a.0.distance.total_cmp(&b.0.distance));
        if let Some(w) = segs.windows(2).find(|w| w[0].0.distance == w[1].0.distance) {
            return Err(Error::Data(format!(
                "line {}: duplicate (track_id, distance) = ({id:?}, {})",
                w[1].1, w[1].0.distance
            )));
        }
        tracks.push(Track::new(id, segs.into_iter().map(|(s, _)| s).collect())?);
    }
    let mut collection = TrackCollection::new(tracks)?;
    collection.dropped_rows = dropped;
    Ok(collection)
}

pub fn write_tracks<W: Write>(writer: W, tracks: &[Track]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACK_CSV_HEADER)?;
    for t in tracks {
        for s in t.segments() {
            w.write_record([
                t.id().to_string(),
                s.distance.to_string(),
                s.height.to_string(),
                s.photon_rate.to_string(),
                s.background_rate.to_string(),
                s.n_pulses.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Replaces the background rate by its per-track z-score (population std).
/// A constant background maps to zero.
pub fn normalize_background_per_track(track: &Track) -> Track {
    let n = track.len() as f64;
    let mean = track.segments.iter().map(|s| s.background_rate).sum::<f64>() / n;
    let var = track
        .segments
        .iter()
        .map(|s| (s.background_rate - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let segments = track
        .segments
        .iter()
        .map(|s| Segment {
            background_rate: if std > 0.0 {
                (s.background_rate - mean) / std
            } else {
                0.0
            },
            ..*s
        })
        .collect();
    Track { id: track.id.clone(), segments }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitRatios {
    /// `(n_train, n_val, n_test)` for `n` tracks: validation and test take
    /// the ceiling of their share, training gets the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let sum = self.train + self.val + self.test;
        if [self.train, self.val, self.test].iter().any(|r| !(0.0..=1.0).contains(r))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split ratios must be in [0, 1] and sum to 1, got {self:?}"
            )));
        }
        // Guard against 0.1 * 10 landing a hair above 1.
        let share = |r: f64| ((r * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let n_val = share(self.val);
        let n_test = share(self.test);
        if n < 3 || n_val + n_test >= n {
            return Err(Error::Data(format!("too few tracks: {n}")));
        }
        Ok((n - n_val - n_test, n_val, n_test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// Disjoint track-id sets covering every input id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        if self.train.contains(id) {
            Some(Split::Train)
        } else if self.val.contains(id) {
            Some(Split::Val)
        } else if self.test.contains(id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// `track_id,split` rows sorted by split then id.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["track_id", "split"])?;
        for split in [Split::Train, Split::Val, Split::Test] {
            for id in self.ids(split) {
                w.write_record([id.as_str(), split.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut out = Self::default();
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or("").to_string();
            let split: Split = rec.get(1).unwrap_or("").parse()?;
            if out.split_of(&id).is_some() {
                return Err(Error::Data(format!("track {id:?} assigned twice")));
            }
            match split {
                Split::Train => out.train.insert(id),
                Split::Val => out.val.insert(id),
                Split::Test => out.test.insert(id),
            };
        }
        Ok(out)
    }
}

/// Seeded shuffle of whole tracks into train / validation / test.
pub fn split_tracks(ids: &[String], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Data("duplicate track ids in split input".into()));
    }
    let (n_train, n_val, _) = ratios.counts(ids.len())?;
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = SplitAssignment::default();
    for (i, id) in shuffled.into_iter().enumerate() {
        if i < n_train {
            out.train.insert(id);
        } else if i < n_train + n_val {
            out.val.insert(id);
        } else {
            out.test.insert(id);
        }
    }
    Ok(out)
}
