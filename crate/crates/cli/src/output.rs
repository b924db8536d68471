//! Output directory bookkeeping: CSV sidecars, the summary and the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use lsvlab::Result;

use crate::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One CSV column: name, unit, meaning.
pub type Column = (&'static str, &'static str, &'static str);

#[derive(Serialize)]
struct ColumnMeta {
    name: &'static str,
    unit: &'static str,
    description: &'static str,
}

#[derive(Serialize)]
struct Provenance {
    generator: String,
    kind: &'static str,
    master_seed: u64,
    config_sha256: String,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    file: &'a str,
    columns: Vec<ColumnMeta>,
    provenance: Provenance,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    /// SHA-256 of every file written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

pub struct OutputDir {
    dir: PathBuf,
    kind: &'static str,
    master_seed: u64,
    config_sha256: String,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let echo = serde_json::to_vec(cfg)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            kind: cfg.kind.name(),
            master_seed: cfg.master_seed,
            config_sha256: hex::encode(Sha256::digest(&echo)),
            files: Vec::new(),
        })
    }

    /// Writes `name` through `write` and its `<stem>.meta.json` sidecar.
    pub fn csv(&mut self, name: &str, columns: &[Column], write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        write(&self.dir.join(name))?;
        self.files.push(name.to_string());
        let sidecar = Sidecar {
            file: name,
            columns: columns
                .iter()
                .map(|&(name, unit, description)| ColumnMeta { name, unit, description })
                .collect(),
            provenance: Provenance {
                generator: format!("lsvlab {VERSION}"),
                kind: self.kind,
                master_seed: self.master_seed,
                config_sha256: self.config_sha256.clone(),
            },
        };
        let stem = name.strip_suffix(".csv").unwrap_or(name);
        self.json(&format!("{stem}.meta.json"), &sidecar)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Checksums every file written so far and writes `manifest.json`.
    pub fn finish(self, config: ExperimentConfig, workers: usize, wall_clock_seconds: f64) -> Result<RunManifest> {
        let mut outputs = BTreeMap::new();
        for f in &self.files {
            let bytes = std::fs::read(self.dir.join(f))?;
            outputs.insert(f.clone(), hex::encode(Sha256::digest(&bytes)));
        }
        let manifest = RunManifest {
            config,
            version: VERSION.to_string(),
            workers,
            wall_clock_seconds,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

/// Writes rows of already formatted fields under `header`.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}
