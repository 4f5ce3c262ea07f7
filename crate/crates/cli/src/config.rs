//! Sectioned TOML run configuration. Every key is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use icetopo::networks::{Arch, ArchSpec, CnnPooling};
use icetopo::supersegment::WINDOW_LEN;
use icetopo::synth::SynthConfig;
use icetopo::track::{ColumnMap, SplitRatios};
use icetopo::training::TrainConfig;
use icetopo_umap::UmapConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Track CSV to ingest. Without it the synthetic corpus is used.
    pub tracks: Option<PathBuf>,
    /// Optional `track_id,distance_m,regime` sidecar for external tracks.
    pub labels: Option<PathBuf>,
    pub normalize_background: bool,
    pub column_map: ColumnMap,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { tracks: None, labels: None, normalize_background: true, column_map: ColumnMap::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self { train: r.train, val: r.val, test: r.test, seed: 0 }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios { train: self.train, val: self.val, test: self.test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Architectures trained by `pipeline` and by `train` without `--arch`.
    pub archs: Vec<String>,
    pub enc_channels: [usize; 2],
    pub embed_dim: usize,
    pub dec_channels: [usize; 2],
    pub kernel: usize,
    pub dropout: f64,
    /// CNN encoder reduction: "flatten" or "mean".
    pub pooling: String,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = ArchSpec::standard(Arch::Lstm);
        let t = TrainConfig::default();
        Self {
            archs: vec!["lstm".into(), "cnn".into()],
            enc_channels: s.enc_channels,
            embed_dim: s.embed_dim,
            dec_channels: s.dec_channels,
            kernel: s.kernel,
            dropout: s.dropout,
            pooling: "flatten".into(),
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            patience: t.patience,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            seed: t.seed,
        }
    }
}

impl ModelSection {
    pub fn archs(&self) -> Result<Vec<Arch>, CliError> {
        if self.archs.is_empty() {
            return Err(CliError::Config("model.archs must name at least one architecture".into()));
        }
        let mut out = Vec::new();
        for a in &self.archs {
            let arch: Arch = a.parse().map_err(|e: icetopo::Error| CliError::Config(e.to_string()))?;
            if !out.contains(&arch) {
                out.push(arch);
            }
        }
        Ok(out)
    }

    pub fn spec(&self, arch: Arch) -> Result<ArchSpec, CliError> {
        let pooling = match self.pooling.as_str() {
            "flatten" => CnnPooling::Flatten,
            "mean" => CnnPooling::Mean,
            other => return Err(CliError::Config(format!("model.pooling must be flatten or mean, got {other:?}"))),
        };
        let spec = ArchSpec {
            arch,
            seq_len: WINDOW_LEN,
            n_features: icetopo::N_FEATURES,
            enc_channels: self.enc_channels,
            embed_dim: self.embed_dim,
            dec_channels: self.dec_channels,
            kernel: self.kernel,
            dropout: self.dropout,
            pooling,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = TrainConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed: self.seed,
        };
        t.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Clusters for the compactness comparison.
    pub k: usize,
    /// Density-grid bins per axis.
    pub bins: usize,
    /// Bins of the per-feature distribution histograms.
    pub hist_bins: usize,
    pub seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { k: 3, bins: 50, hist_bins: 50, seed: 0 }
    }
}

/// `[umap]`: every [`UmapConfig`] key plus `max_points`, the cap on
/// training windows projected (larger splits are subsampled).
#[derive(Debug, Clone, PartialEq)]
pub struct UmapSection {
    pub config: UmapConfig,
    pub max_points: usize,
}

impl Default for UmapSection {
    fn default() -> Self {
        Self { config: UmapConfig::default(), max_points: 100_000 }
    }
}

/// `[synth]`: every [`SynthConfig`] key plus `seed`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthSection {
    pub config: SynthConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub umap: UmapSection,
    pub analysis: AnalysisSection,
    pub synth: SynthSection,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlainSections {
    data: DataSection,
    split: SplitSection,
    model: ModelSection,
    analysis: AnalysisSection,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut root: toml::Table =
            text.parse().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        // [umap] and [synth] wrap a library struct plus one extra key, so
        // they are split by hand to keep unknown-key rejection intact.
        let mut umap = take_section(&mut root, "umap")?;
        let mut synth = take_section(&mut root, "synth")?;
        let max_points = take_int(&mut umap, "umap", "max_points", UmapSection::default().max_points)?;
        let synth_seed = take_int(&mut synth, "synth", "seed", 0)?;
        let plain: PlainSections = from_table(root, None)?;
        let cfg = Self {
            data: plain.data,
            split: plain.split,
            model: plain.model,
            umap: UmapSection { config: from_table(umap, Some("umap"))?, max_points },
            analysis: plain.analysis,
            synth: SynthSection { config: from_table(synth, Some("synth"))?, seed: synth_seed },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
        let mut cfg = Self::parse(&text)?;
        // Data paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.tracks, &mut cfg.data.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: String| CliError::Config(e);
        self.split.ratios().counts(10).map_err(|e| cfg(e.to_string()))?;
        for arch in self.model.archs()? {
            self.model.spec(arch)?;
        }
        self.model.train_config()?;
        self.umap.config.validate().map_err(|e| cfg(e.to_string()))?;
        if self.umap.max_points <= self.umap.config.n_neighbors {
            return Err(cfg(format!("umap.max_points must exceed n_neighbors ({})", self.umap.config.n_neighbors)));
        }
        self.synth.config.validate().map_err(|e| cfg(e.to_string()))?;
        if self.analysis.k < 2 || self.analysis.bins == 0 || self.analysis.hist_bins == 0 {
            return Err(cfg("analysis.k must be >= 2 and bin counts positive".into()));
        }
        Ok(())
    }

    /// Sets every stage seed to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.model.seed = seed;
        self.umap.config.seed = seed;
        self.analysis.seed = seed;
        self.synth.seed = seed;
    }

    /// Canonical TOML rendering; hashed into the run manifest.
    pub fn to_toml(&self) -> String {
        let mut umap = to_table(&self.umap.config);
        umap.insert("max_points".into(), toml::Value::Integer(self.umap.max_points as i64));
        let mut synth = to_table(&self.synth.config);
        synth.insert("seed".into(), toml::Value::Integer(self.synth.seed as i64));
        let mut root = toml::Table::new();
        root.insert("data".into(), toml::Value::Table(to_table(&self.data)));
        root.insert("split".into(), toml::Value::Table(to_table(&self.split)));
        root.insert("model".into(), toml::Value::Table(to_table(&self.model)));
        root.insert("umap".into(), toml::Value::Table(umap));
        root.insert("analysis".into(), toml::Value::Table(to_table(&self.analysis)));
        root.insert("synth".into(), toml::Value::Table(synth));
        toml::to_string(&root).expect("config serializes")
    }
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    toml::Table::try_from(v).expect("section serializes to a table")
}

fn from_table<T: serde::de::DeserializeOwned>(table: toml::Table, section: Option<&str>) -> Result<T, CliError> {
    table.try_into().map_err(|e: toml::de::Error| {
        CliError::Config(match section {
            Some(s) => format!("[{s}] {}", e.message()),
            None => e.message().to_string(),
        })
    })
}

fn take_section(root: &mut toml::Table, name: &str) -> Result<toml::Table, CliError> {
    match root.remove(name) {
        None => Ok(toml::Table::new()),
        Some(toml::Value::Table(t)) => Ok(t),
        Some(_) => Err(CliError::Config(format!("[{name}] must be a table"))),
    }
}

fn take_int<T: TryFrom<i64>>(table: &mut toml::Table, section: &str, key: &str, default: T) -> Result<T, CliError> {
    match table.remove(key) {
        None => Ok(default),
        Some(toml::Value::Integer(i)) => {
            T::try_from(i).map_err(|_| CliError::Config(format!("{section}.{key} out of range: {i}")))
        }
        Some(v) => Err(CliError::Config(format!("{section}.{key} must be an integer, got {v}"))),
    }
}
