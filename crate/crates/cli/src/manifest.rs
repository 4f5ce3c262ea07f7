use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::Workspace;
use crate::config::PipelineConfig;
use crate::Result;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    /// Canonical rendering of the effective configuration.
    pub config: String,
    pub seed_override: Option<u64>,
    pub seeds: BTreeMap<String, u64>,
    /// sha256 of every other file in the run directory.
    pub files: BTreeMap<String, String>,
}

pub fn build_manifest(cfg: &PipelineConfig, ws: &Workspace, seed_override: Option<u64>) -> Result<Manifest> {
    let config = cfg.to_toml();
    let seeds = BTreeMap::from([
        ("analysis".to_string(), cfg.analysis.seed),
        ("model".to_string(), cfg.model.seed),
        ("split".to_string(), cfg.split.seed),
        ("synth".to_string(), cfg.synth.seed),
        ("umap".to_string(), cfg.umap.config.seed),
    ]);
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(&ws.dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name != MANIFEST && entry.file_type()?.is_file() {
            files.insert(name, sha256_hex(&std::fs::read(entry.path())?));
        }
    }
    Ok(Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(config.as_bytes()),
        config,
        seed_override,
        seeds,
        files,
    })
}

pub fn write_manifest(cfg: &PipelineConfig, ws: &Workspace, seed_override: Option<u64>) -> Result<()> {
    let m = build_manifest(cfg, ws, seed_override)?;
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(ws.path(MANIFEST), text)?;
    Ok(())
}
