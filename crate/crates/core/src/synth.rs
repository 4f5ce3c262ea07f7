//! Seeded synthetic along-track generator with three surface regimes.
//!
//! Each feature follows a regime-dependent mean plus an along-track
//! Ornstein-Uhlenbeck process (correlation length in meters) and a small
//! white-noise share. Sea ice additionally carries pressure ridges, modeled as
//! triangular height bumps. Regime labels are returned beside the tracks and
//! never stored in them.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::supersegment::SuperSegmentSet;
use crate::track::{Segment, Track, TrackCollection};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Water,
    ThinIce,
    SeaIce,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Water, Regime::ThinIce, Regime::SeaIce];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Water => "water",
            Regime::ThinIce => "thin_ice",
            Regime::SeaIce => "sea_ice",
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown regime {s:?}")))
    }
}

/// Feature distribution of one surface regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeParams {
    /// Height mean and marginal std (m), ridges excluded.
    pub height_mean: f64,
    pub height_std: f64,
    /// Photons per shot, mean and marginal std.
    pub photon_rate_mean: f64,
    pub photon_rate_std: f64,
    /// Multiplier on the track's background level.
    pub background_factor: f64,
    /// Per-segment probability that a ridge is centered on the segment.
    pub ridge_rate: f64,
    /// Ridge crest height range (m).
    pub ridge_height: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_tracks: usize,
    /// Along-track length of every track (m).
    pub track_length: f64,
    /// Ordinary spacing is `min_spacing + Exp(spacing_extra_mean)`, clipped
    /// to `max_spacing`. A zero extra mean gives fixed spacing.
    pub min_spacing: f64,
    pub spacing_extra_mean: f64,
    pub max_spacing: f64,
    /// Probability that a spacing is replaced by a gap drawn from
    /// `(max_spacing, max_gap]`.
    pub gap_injection_rate: f64,
    pub max_gap: f64,
    /// Expected regime switches per kilometer.
    pub regime_switch_rate: f64,
    /// Correlation length (m) of the along-track processes; 0 gives white noise.
    pub correlation_length: f64,
    /// Share of each feature's variance that is white noise.
    pub white_fraction: f64,
    /// Ridge half-width range (m).
    pub ridge_half_width: [f64; 2],
    /// Pulses per segment are about `pulse_budget / photon_rate`.
    pub pulse_budget: f64,
    /// Per-track background level range.
    pub background_level: [f64; 2],
    /// Linear background drift, as a fraction of the level over the track.
    pub background_drift: f64,
    /// Relative std of the background process.
    pub background_std: f64,
    pub water: RegimeParams,
    pub thin_ice: RegimeParams,
    pub sea_ice: RegimeParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tracks: 24,
            track_length: 4500.0,
            min_spacing: 10.0,
            spacing_extra_mean: 8.0,
            max_spacing: 50.0,
            gap_injection_rate: 0.005,
            max_gap: 200.0,
            regime_switch_rate: 1.0,
            correlation_length: 150.0,
            white_fraction: 0.03,
            ridge_half_width: [20.0, 40.0],
            pulse_budget: 150.0,
            background_level: [0.8, 1.2],
            background_drift: 0.2,
            background_std: 0.1,
            water: RegimeParams {
                height_mean: 0.02,
                height_std: 0.01,
                photon_rate_mean: 9.0,
                photon_rate_std: 1.0,
                background_factor: 0.6,
                ridge_rate: 0.0,
                ridge_height: [0.0, 0.0],
            },
            thin_ice: RegimeParams {
                height_mean: 0.10,
                height_std: 0.03,
                photon_rate_mean: 6.0,
                photon_rate_std: 0.8,
                background_factor: 0.9,
                ridge_rate: 0.0,
                ridge_height: [0.0, 0.0],
            },
            sea_ice: RegimeParams {
                height_mean: 0.30,
                height_std: 0.10,
                photon_rate_mean: 3.0,
                photon_rate_std: 0.5,
                background_factor: 1.2,
                ridge_rate: 0.02,
                ridge_height: [0.5, 2.0],
            },
        }
    }
}

impl SynthConfig {
    pub fn regime(&self, r: Regime) -> &RegimeParams {
        match r {
            Regime::Water => &self.water,
            Regime::ThinIce => &self.thin_ice,
            Regime::SeaIce => &self.sea_ice,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synth: {msg}")));
        if self.n_tracks == 0 {
            return bad("n_tracks must be positive");
        }
        if !(self.track_length >= 100.0) {
            return bad("track_length must be at least 100 m");
        }
        if !(10.0 <= self.min_spacing && self.min_spacing <= self.max_spacing && self.max_spacing <= 50.0) {
            return bad("ordinary spacing must satisfy 10 <= min_spacing <= max_spacing <= 50");
        }
        if !(self.spacing_extra_mean >= 0.0) {
            return bad("spacing_extra_mean must be non-negative");
        }
        if !(self.max_gap > 50.0 && self.max_gap <= 200.0) {
            return bad("max_gap must lie in (50, 200]");
        }
        if !(0.0..=1.0).contains(&self.gap_injection_rate) || !(0.0..1.0).contains(&self.white_fraction) {
            return bad("rates must lie in [0, 1]");
        }
        if !(self.regime_switch_rate >= 0.0 && self.correlation_length >= 0.0) {
            return bad("switch rate and correlation length must be non-negative");
        }
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1];
        if !range_ok(self.ridge_half_width) || self.ridge_half_width[0] <= 0.0 {
            return bad("ridge_half_width must be a positive range");
        }
        if !range_ok(self.background_level) || self.background_level[0] <= 0.0 {
            return bad("background_level must be a positive range");
        }
        if !(self.pulse_budget > 0.0 && self.background_drift.abs() < 2.0 && self.background_std >= 0.0) {
            return bad("invalid pulse or background settings");
        }
        for r in Regime::ALL {
            let p = self.regime(r);
            let ok = p.height_std >= 0.0
                && p.photon_rate_mean > 0.0
                && p.photon_rate_std >= 0.0
                && p.background_factor > 0.0
                && (0.0..=1.0).contains(&p.ridge_rate)
                && range_ok(p.ridge_height)
                && p.height_mean.is_finite();
            if !ok {
                return bad(&format!("invalid parameters for {}", r.as_str()));
            }
        }
        Ok(())
    }
}

/// A generated track and the regime of each of its segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrack {
    pub track: Track,
    pub regimes: Vec<Regime>,
}

/// Stationary unit-variance OU process sampled at arbitrary distances.
struct Ou {
    z: f64,
    length: f64,
}

impl Ou {
    fn new(rng: &mut ChaCha8Rng, length: f64) -> Self {
        Self { z: rng.sample(StandardNormal), length }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng, step: f64) -> f64 {
        let phi = if self.length > 0.0 { (-step / self.length).exp() } else { 0.0 };
        let e: f64 = rng.sample(StandardNormal);
        self.z = phi * self.z + (1.0 - phi * phi).sqrt() * e;
        self.z
    }
}

/// One track with id `synth-<seed>`.
pub fn generate_track(config: &SynthConfig, seed: u64) -> Result<SynthTrack> {
    generate_track_with_id(config, format!("synth-{seed}"), ChaCha8Rng::seed_from_u64(seed))
}

fn generate_track_with_id(config: &SynthConfig, id: String, mut rng: ChaCha8Rng) -> Result<SynthTrack> {
    config.validate()?;
    let c = config;

    // Positions and regimes.
    let extra = (c.spacing_extra_mean > 0.0).then(|| Exp::new(1.0 / c.spacing_extra_mean).unwrap());
    let mut distances = vec![0.0];
    let mut regimes = vec![Regime::ALL[rng.random_range(0..3)]];
    loop {
        let step = if rng.random::<f64>() < c.gap_injection_rate {
            // Uniform on (max_spacing, max_gap].
            c.max_gap - rng.random::<f64>() * (c.max_gap - c.max_spacing)
        } else {
            let e = extra.map_or(0.0, |d| d.sample(&mut rng));
            (c.min_spacing + e).min(c.max_spacing)
        };
        let next = distances[distances.len() - 1] + step;
        if next > c.track_length + 1e-9 {
            break;
        }
        let p_switch = 1.0 - (-c.regime_switch_rate * step / 1000.0).exp();
        let mut r = regimes[regimes.len() - 1];
        if rng.random::<f64>() < p_switch {
            let others: Vec<Regime> = Regime::ALL.into_iter().filter(|&o| o != r).collect();
            r = others[rng.random_range(0..2)];
        }
        distances.push(next);
        regimes.push(r);
    }
    let n = distances.len();

    // Ridges: triangular bumps confined to sea-ice segments.
    let mut ridge = vec![0.0; n];
    for i in 0..n {
        let p = c.regime(regimes[i]);
        if p.ridge_rate > 0.0 && rng.random::<f64>() < p.ridge_rate {
            let crest = rng.random_range(p.ridge_height[0]..=p.ridge_height[1]);
            let half = rng.random_range(c.ridge_half_width[0]..=c.ridge_half_width[1]);
            for j in 0..n {
                let d = (distances[j] - distances[i]).abs();
                if d < half && regimes[j] == regimes[i] {
                    ridge[j] += crest * (1.0 - d / half);
                }
            }
        }
    }

    let level = rng.random_range(c.background_level[0]..=c.background_level[1]);
    let drift_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (wa, ww) = ((1.0 - c.white_fraction).sqrt(), c.white_fraction.sqrt());
    let mut procs = [(); 3].map(|_| Ou::new(&mut rng, c.correlation_length));
    let mut segments = Vec::with_capacity(n);
    for i in 0..n {
        let step = if i == 0 { 0.0 } else { distances[i] - distances[i - 1] };
        let mut draw = |k: usize, rng: &mut ChaCha8Rng| {
            let z = if i == 0 { procs[k].z } else { procs[k].advance(rng, step) };
            let e: f64 = rng.sample(StandardNormal);
            wa * z + ww * e
        };
        let p = c.regime(regimes[i]);
        let height = p.height_mean + p.height_std * draw(0, &mut rng) + ridge[i];
        let photon_rate = (p.photon_rate_mean + p.photon_rate_std * draw(1, &mut rng)).max(0.5);
        let trend = 1.0 + drift_sign * c.background_drift * (distances[i] / c.track_length - 0.5);
        let background_rate =
            (level * p.background_factor * trend * (1.0 + c.background_std * draw(2, &mut rng))).max(1e-3);
        let n_pulses = (c.pulse_budget / photon_rate).round().max(1.0);
        segments.push(Segment { distance: distances[i], height, photon_rate, background_rate, n_pulses });
    }
    Ok(SynthTrack { track: Track::new(id, segments)?, regimes })
}

/// Generated tracks plus, per track, the regime of every segment.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub tracks: TrackCollection,
    pub labels: Vec<Vec<Regime>>,
}

/// `config.n_tracks` tracks named `synth_0000`, `synth_0001`, ...; track `i`
/// draws from stream `i` of the seeded generator.
pub fn generate_corpus(config: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    config.validate()?;
    let mut tracks = Vec::with_capacity(config.n_tracks);
    let mut labels = Vec::with_capacity(config.n_tracks);
    for i in 0..config.n_tracks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let t = generate_track_with_id(config, format!("synth_{i:04}"), rng)?;
        tracks.push(t.track);
        labels.push(t.regimes);
    }
    Ok(SynthCorpus { tracks: TrackCollection::new(tracks)?, labels })
}

pub const LABEL_CSV_HEADER: [&str; 3] = ["track_id", "distance_m", "regime"];

pub fn write_labels<W: Write>(w: W, corpus: &SynthCorpus) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(LABEL_CSV_HEADER)?;
    for (t, regs) in corpus.tracks.tracks.iter().zip(&corpus.labels) {
        for (s, r) in t.segments().iter().zip(regs) {
            w.write_record([t.id(), &format!("{}", s.distance), r.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Regime per `(track_id, distance)`; distances are matched bit-exactly as
/// written by [`write_labels`].
#[derive(Debug, Clone, Default)]
pub struct LabelTable {
    map: HashMap<(String, u64), Regime>,
}

impl LabelTable {
    pub fn from_corpus(corpus: &SynthCorpus) -> Self {
        let mut map = HashMap::new();
        for (t, regs) in corpus.tracks.tracks.iter().zip(&corpus.labels) {
            for (s, r) in t.segments().iter().zip(regs) {
                map.insert((t.id().to_string(), s.distance.to_bits()), *r);
            }
        }
        Self { map }
    }

    pub fn get(&self, track_id: &str, distance: f64) -> Option<Regime> {
        self.map.get(&(track_id.to_string(), distance.to_bits())).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Regime of each window's center segment.
    pub fn window_labels(&self, set: &SuperSegmentSet) -> Result<Vec<Regime>> {
        set.samples
            .iter()
            .map(|s| {
                self.get(&s.track_id, s.center_distance).ok_or_else(|| {
                    Error::Data(format!("no label for {} at {} m", s.track_id, s.center_distance))
                })
            })
            .collect()
    }
}

pub fn read_labels<R: Read>(r: R) -> Result<LabelTable> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(LABEL_CSV_HEADER) {
        return Err(Error::Format(format!("label CSV header must be {}", LABEL_CSV_HEADER.join(","))));
    }
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let d: f64 = rec[1]
            .parse()
            .map_err(|_| Error::Format(format!("bad distance {:?}", &rec[1])))?;
        map.insert((rec[0].to_string(), d.to_bits()), rec[2].parse()?);
    }
    Ok(LabelTable { map })
}
