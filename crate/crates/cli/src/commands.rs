use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use icetopo::analysis::{
    compactness_report, density_grid, evaluate_reconstruction, feature_histograms, write_histograms_csv,
};
use icetopo::networks::Arch;
use icetopo::supersegment::{
    compute_stats, destandardize_values, read_sseg, standardize, write_sseg, SuperSegmentSet,
};
use icetopo::synth::{generate_corpus, read_labels, write_labels, LabelTable, Regime};
use icetopo::track::{ingest_tracks, normalize_background_per_track, read_tracks, split_tracks, write_tracks};
use icetopo::track::{ColumnMap, Split, SplitAssignment, TrackCollection};
use icetopo::training::{fit, load_model, save_model, TrainedModel};
use icetopo::{FEATURE_NAMES, N_FEATURES};
use icetopo_umap::{read_layout_csv, subsample, umap_fit, write_layout_csv, SourceTag, TaggedLayout};

use crate::config::PipelineConfig;
use crate::plot::{render_svg, Layer, Panel};
use crate::{manifest, CliError, Result};

pub const SYNTH_TRACKS: &str = "synth_tracks.csv";
pub const LABELS: &str = "labels.csv";
pub const TRACKS: &str = "tracks.csv";
pub const SPLIT: &str = "split.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const HISTOGRAMS: &str = "feature_histograms.csv";
pub const COMPACTNESS_TXT: &str = "compactness.txt";
pub const COMPACTNESS_CSV: &str = "compactness.csv";
pub const SCATTER_SVG: &str = "umap.svg";
pub const REGIME_SVG: &str = "umap_regimes.svg";

pub fn sseg_name(split: Split) -> String {
    format!("supersegments_{}.sseg", split.as_str())
}

pub fn model_name(arch: Arch) -> String {
    format!("model_{}.aewt", arch.name())
}

pub fn train_log_name(arch: Arch) -> String {
    format!("train_log_{}.csv", arch.name())
}

pub fn embeddings_name(arch: Arch) -> String {
    format!("embeddings_{}.csv", arch.name())
}

pub fn layout_name(tag: SourceTag) -> String {
    format!("layout_{}.csv", tag.as_str())
}

const TAGS: [SourceTag; 3] = [SourceTag::Original, SourceTag::Lstm, SourceTag::Cnn];
const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// The shared run directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&self, name: &str) -> Result<PathBuf> {
        existing(self.path(name))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }
}

fn existing(p: PathBuf) -> Result<PathBuf> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::MissingInput(p))
    }
}

fn open(p: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).map_err(|_| CliError::MissingInput(p.to_path_buf()))?))
}

/// What `umap --input` projects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UmapInput {
    Raw,
    Embedding(Arch),
}

impl UmapInput {
    pub fn tag(self) -> SourceTag {
        match self {
            UmapInput::Raw => SourceTag::Original,
            UmapInput::Embedding(Arch::Lstm) => SourceTag::Lstm,
            UmapInput::Embedding(Arch::Cnn) => SourceTag::Cnn,
        }
    }
}

impl FromStr for UmapInput {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "raw" {
            return Ok(UmapInput::Raw);
        }
        match s.strip_prefix("embedding:").map(Arch::from_str) {
            Some(Ok(arch)) => Ok(UmapInput::Embedding(arch)),
            _ => Err(CliError::Config(format!("--input must be raw or embedding:<lstm|cnn>, got {s:?}"))),
        }
    }
}

pub fn archs(cfg: &PipelineConfig, flag: Option<&str>) -> Result<Vec<Arch>> {
    match flag {
        Some(a) => Ok(vec![a.parse().map_err(|e: icetopo::Error| CliError::Config(e.to_string()))?]),
        None => cfg.model.archs(),
    }
}

pub fn synth(cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let corpus = generate_corpus(&cfg.synth.config, cfg.synth.seed)?;
    write_tracks(ws.create(SYNTH_TRACKS)?, &corpus.tracks.tracks)?;
    write_labels(ws.create(LABELS)?, &corpus)?;
    log::info!(
        "synth: {} tracks, {} segments (seed {})",
        corpus.tracks.tracks.len(),
        corpus.tracks.n_segments(),
        cfg.synth.seed
    );
    Ok(())
}

pub fn ingest(cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let (src, map) = match &cfg.data.tracks {
        Some(p) => (existing(p.clone())?, cfg.data.column_map.clone()),
        None => (ws.input(SYNTH_TRACKS)?, ColumnMap::default()),
    };
    let tracks = ingest_tracks(&src, &map)?;
    if tracks.dropped_rows > 0 {
        log::warn!("ingest: dropped {} rows with non-finite fields", tracks.dropped_rows);
    }
    let out: Vec<_> = if cfg.data.normalize_background {
        tracks.tracks.iter().map(normalize_background_per_track).collect()
    } else {
        tracks.tracks
    };
    write_tracks(ws.create(TRACKS)?, &out)?;
    if let Some(labels) = &cfg.data.labels {
        let table = read_labels(open(labels)?)?;
        log::info!("ingest: {} labels from {}", table.len(), labels.display());
        std::fs::copy(labels, ws.path(LABELS))?;
    }
    log::info!("ingest: {} tracks from {}", out.len(), src.display());
    Ok(())
}

fn load_tracks(ws: &Workspace) -> Result<TrackCollection> {
    Ok(read_tracks(open(&ws.input(TRACKS)?)?, &ColumnMap::default())?)
}

pub fn split(cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let tracks = load_tracks(ws)?;
    let assignment = split_tracks(&tracks.ids(), cfg.split.ratios(), cfg.split.seed)?;
    assignment.write_csv(ws.create(SPLIT)?)?;
    log::info!("split: {:?} tracks (train, val, test)", assignment.counts());
    Ok(())
}

pub fn supersegment(_cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let tracks = load_tracks(ws)?;
    let assignment = SplitAssignment::read_csv(open(&ws.input(SPLIT)?)?)?;
    if let Some(t) = tracks.tracks.iter().find(|t| assignment.split_of(t.id()).is_none()) {
        return Err(CliError::Invalid(format!("track {} is missing from the split", t.id())));
    }
    for split in SPLITS {
        let set = SuperSegmentSet::from_tracks(
            tracks.tracks.iter().filter(|t| assignment.split_of(t.id()) == Some(split)),
            split.into(),
        );
        let mut w = ws.create(&sseg_name(split))?;
        write_sseg(&mut w, &set)?;
        w.flush()?;
        log::info!("supersegment: {} windows in {}", set.len(), split.as_str());
    }
    Ok(())
}

pub fn load_split(ws: &Workspace, split: Split) -> Result<SuperSegmentSet> {
    Ok(read_sseg(open(&ws.input(&sseg_name(split))?)?, split.into())?)
}

pub fn train(cfg: &PipelineConfig, ws: &Workspace, arch: Arch) -> Result<()> {
    let train = load_split(ws, Split::Train)?;
    let val = load_split(ws, Split::Val)?;
    let stats = compute_stats(&train)?;
    let train = standardize(train, &stats)?;
    let val = standardize(val, &stats)?;
    let (model, report) = fit(&train, &val, cfg.model.spec(arch)?, &cfg.model.train_config()?)?;
    save_model(ws.path(&model_name(arch)), &model)?;
    report.write_csv(ws.create(&train_log_name(arch))?)?;
    log::info!(
        "train {}: {} epochs ({:?}), best val loss {:.6e} at epoch {}",
        arch.name(),
        report.epochs_run(),
        report.stop_reason,
        report.best_val_loss(),
        report.best_epoch + 1
    );
    Ok(())
}

pub fn load_trained(ws: &Workspace, arch: Arch) -> Result<TrainedModel> {
    let model = load_model(ws.input(&model_name(arch))?)?;
    if model.arch() != arch {
        return Err(CliError::Invalid(format!("{} holds a {} model", model_name(arch), model.arch().name())));
    }
    Ok(model)
}

/// Indices of the training windows that UMAP projects.
pub fn umap_sample(cfg: &PipelineConfig, n_train: usize) -> Result<Vec<usize>> {
    Ok(subsample(n_train, n_train.min(cfg.umap.max_points), cfg.umap.config.seed)?)
}

pub fn embed(cfg: &PipelineConfig, ws: &Workspace, arch: Arch) -> Result<()> {
    let model = load_trained(ws, arch)?;
    let train = load_split(ws, Split::Train)?;
    let sample = umap_sample(cfg, train.len())?;
    let set = standardize(train.subset(&sample), &model.stats)?;
    let emb = model.net.embed_batch(&set.flat_values(), 1024)?;
    let dim = model.net.spec().embed_dim;
    let mut w = csv::Writer::from_writer(ws.create(&embeddings_name(arch))?);
    let mut header = vec!["sample_index".to_string(), "track_id".into(), "center_distance".into()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for ((idx, s), row) in sample.iter().zip(&set.samples).zip(emb.chunks(dim)) {
        let mut rec = vec![idx.to_string(), s.track_id.to_string(), s.center_distance.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    log::info!("embed {}: {} windows x {dim}", arch.name(), sample.len());
    Ok(())
}

/// `(sample_index, n x dim points, dim)` of a stored embedding file.
pub fn read_embeddings(path: &Path) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let dim = rdr.headers()?.len().saturating_sub(3);
    if dim == 0 {
        return Err(CliError::Invalid(format!("{} has no embedding columns", path.display())));
    }
    let (mut idx, mut pts) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || CliError::Invalid(format!("{}: malformed row {:?}", path.display(), rec));
        idx.push(rec[0].parse().map_err(|_| bad())?);
        for v in rec.iter().skip(3) {
            pts.push(v.parse::<f64>().map_err(|_| bad())?);
        }
    }
    Ok((idx, pts, dim))
}

pub fn umap(cfg: &PipelineConfig, ws: &Workspace, input: &UmapInput) -> Result<()> {
    let (idx, points, dim) = match *input {
        UmapInput::Raw => {
            let train = load_split(ws, Split::Train)?;
            let sample = umap_sample(cfg, train.len())?;
            let stats = compute_stats(&train)?;
            let set = standardize(train.subset(&sample), &stats)?;
            (sample, set.flat_values(), icetopo::supersegment::WINDOW_VALUES)
        }
        UmapInput::Embedding(arch) => read_embeddings(&ws.input(&embeddings_name(arch))?)?,
    };
    let (model, layout) = umap_fit(&points, dim, &cfg.umap.config)?;
    let tag = input.tag();
    write_layout_csv(ws.create(&layout_name(tag))?, &layout, Some(&idx), Some(tag))?;
    log::info!(
        "umap {tag}: {} points from {dim}-d, {:?} init, fit residual {:.3e}",
        layout.len(),
        model.init,
        model.curve.residual
    );
    Ok(())
}

fn load_layouts(ws: &Workspace) -> Result<Vec<(SourceTag, TaggedLayout)>> {
    let mut out = Vec::new();
    for tag in TAGS {
        let p = ws.path(&layout_name(tag));
        if p.is_file() {
            out.push((tag, read_layout_csv(open(&p)?)?));
        }
    }
    Ok(out)
}

fn load_labels(ws: &Workspace) -> Result<Option<LabelTable>> {
    let p = ws.path(LABELS);
    if p.is_file() {
        Ok(Some(read_labels(open(&p)?)?))
    } else {
        Ok(None)
    }
}

pub fn metrics(cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let sets: Vec<SuperSegmentSet> = SPLITS.iter().map(|&s| load_split(ws, s)).collect::<Result<_>>()?;
    let mut txt = ws.create(METRICS_TXT)?;
    let mut csv_out = csv::Writer::from_writer(ws.create(METRICS_CSV)?);
    csv_out.write_record(["model", "feature", "rmse", "r2"])?;
    for arch in [Arch::Lstm, Arch::Cnn] {
        if !ws.path(&model_name(arch)).is_file() {
            continue;
        }
        let model = load_trained(ws, arch)?;
        let test = standardize(sets[2].clone(), &model.stats)?;
        let m = evaluate_reconstruction(&model, &test)?;
        m.write_report(&mut txt, arch.name())?;
        for row in m.csv_rows(arch.name()) {
            csv_out.write_record(&row)?;
        }
        log::info!("metrics {}: r2 {:?}", arch.name(), m.r2);

        let mut truth = test.flat_values();
        let mut recon = model.net.reconstruct_batch(&truth, 1024)?;
        destandardize_values(&mut truth, &model.stats);
        destandardize_values(&mut recon, &model.stats);
        for (f, name) in FEATURE_NAMES.iter().enumerate() {
            let pts: Vec<[f64; 2]> = truth
                .iter()
                .zip(&recon)
                .skip(f)
                .step_by(N_FEATURES)
                .map(|(&t, &p)| [t, p])
                .collect();
            let grid = density_grid(&pts, cfg.analysis.bins, cfg.analysis.bins)?;
            grid.write_csv(ws.create(&format!("density_{}_{name}.csv", arch.name()))?)?;
        }
    }
    txt.flush()?;
    csv_out.flush()?;

    let hists: Vec<_> = sets.iter().map(|s| feature_histograms(s, cfg.analysis.hist_bins)).collect::<icetopo::Result<_>>()?;
    let groups: Vec<(&str, &[_])> = SPLITS.iter().zip(&hists).map(|(s, h)| (s.as_str(), h.as_slice())).collect();
    write_histograms_csv(ws.create(HISTOGRAMS)?, &groups)?;

    let layouts = load_layouts(ws)?;
    if !layouts.is_empty() {
        let flat: Vec<(SourceTag, Vec<f64>)> = layouts.iter().map(|(t, l)| (*t, l.layout.flat())).collect();
        let schemes: Vec<(&str, &[f64])> = flat.iter().map(|(t, p)| (t.as_str(), p.as_slice())).collect();
        let report = compactness_report(&schemes, 2, cfg.analysis.k, cfg.analysis.seed)?;
        report.write_report(ws.create(COMPACTNESS_TXT)?)?;
        let mut w = csv::Writer::from_writer(ws.create(COMPACTNESS_CSV)?);
        w.write_record(["scheme", "k", "silhouette", "compactness_ratio"])?;
        for s in &report.schemes {
            w.write_record([
                s.scheme.clone(),
                report.k.to_string(),
                format!("{:.9}", s.silhouette),
                format!("{:.9}", s.compactness_ratio),
            ])?;
            log::info!("compactness {}: silhouette {:.4}, ratio {:.4}", s.scheme, s.silhouette, s.compactness_ratio);
        }
        w.flush()?;
    }
    Ok(())
}

fn tag_color(tag: SourceTag) -> &'static str {
    match tag {
        SourceTag::Original => "black",
        SourceTag::Lstm => "red",
        SourceTag::Cnn => "blue",
    }
}

fn regime_color(r: Regime) -> &'static str {
    match r {
        Regime::Water => "#2c7bb6",
        Regime::ThinIce => "#fdae61",
        Regime::SeaIce => "#7b3294",
    }
}

pub fn plot(_cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let layouts = load_layouts(ws)?;
    if layouts.is_empty() {
        return Err(CliError::MissingInput(ws.path(&layout_name(SourceTag::Original))));
    }
    let overlay = Panel {
        title: "UMAP".into(),
        layers: layouts
            .iter()
            .map(|(tag, l)| Layer {
                label: tag.as_str().into(),
                color: tag_color(*tag),
                points: l.layout.coords.clone(),
            })
            .collect(),
    };
    std::fs::write(ws.path(SCATTER_SVG), render_svg(&[overlay])?)?;

    if let Some(labels) = load_labels(ws)? {
        let train = load_split(ws, Split::Train)?;
        let mut panels = Vec::new();
        for (tag, l) in &layouts {
            let subset = train.subset(&l.sample_index);
            let regimes = labels.window_labels(&subset)?;
            let layers = Regime::ALL
                .iter()
                .map(|&r| Layer {
                    label: r.as_str().into(),
                    color: regime_color(r),
                    points: l.layout.coords.iter().zip(&regimes).filter(|(_, &g)| g == r).map(|(p, _)| *p).collect(),
                })
                .collect();
            panels.push(Panel { title: tag.as_str().into(), layers });
        }
        std::fs::write(ws.path(REGIME_SVG), render_svg(&panels)?)?;
    }
    log::info!("plot: {} layouts", layouts.len());
    Ok(())
}

/// Wall-clock time per stage of one `pipeline` run.
pub type StageTimings = Vec<(String, Duration)>;

pub fn pipeline(cfg: &PipelineConfig, ws: &Workspace, seed_override: Option<u64>) -> Result<StageTimings> {
    let archs = cfg.model.archs()?;
    let mut timings = Vec::new();
    let mut stage = |name: String, f: &dyn Fn() -> Result<()>| -> Result<()> {
        let t = Instant::now();
        f()?;
        timings.push((name, t.elapsed()));
        Ok(())
    };
    if cfg.data.tracks.is_none() {
        stage("synth".into(), &|| synth(cfg, ws))?;
    }
    stage("ingest".into(), &|| ingest(cfg, ws))?;
    stage("split".into(), &|| split(cfg, ws))?;
    stage("supersegment".into(), &|| supersegment(cfg, ws))?;
    for &arch in &archs {
        stage(format!("train:{}", arch.name()), &|| train(cfg, ws, arch))?;
        stage(format!("embed:{}", arch.name()), &|| embed(cfg, ws, arch))?;
    }
    stage("umap:original".into(), &|| umap(cfg, ws, &UmapInput::Raw))?;
    for &arch in &archs {
        stage(format!("umap:{}", arch.name()), &|| umap(cfg, ws, &UmapInput::Embedding(arch)))?;
    }
    stage("metrics".into(), &|| metrics(cfg, ws))?;
    stage("plot".into(), &|| plot(cfg, ws))?;
    stage("manifest".into(), &|| manifest::write_manifest(cfg, ws, seed_override))?;
    Ok(timings)
}
