//! Per-stage run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::io::{read, sha256_hex, write};

/// `<stage>.manifest.json` in the directory holding `output`.
pub fn beside(output: &Path, stage: &str) -> PathBuf {
    output
        .parent()
        .unwrap_or(Path::new(""))
        .join(format!("{stage}.manifest.json"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, shown_as: String) -> Result<Self> {
        let data = read(path)?;
        Ok(Self {
            path: shown_as,
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub stage: String,
    pub argv: Vec<String>,
    /// Effective stage options after config and flags are merged.
    pub config: serde_json::Value,
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
    pub duration_ms: u64,
}

/// Collects what a stage read and wrote, then writes the manifest.
pub struct ManifestBuilder {
    stage: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(stage: &str, config: &impl Serialize) -> Self {
        Self {
            stage: stage.to_string(),
            config: serde_json::to_value(config).expect("options serialize"),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Writes the manifest to `path`; outputs are listed relative to its
    /// directory.
    pub fn finish(self, path: &Path, ctx: &crate::Context) -> Result<RunManifest> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let config_digest = sha256_hex(serde_json::to_string(&self.config)?.as_bytes());
        let inputs = self
            .inputs
            .iter()
            .map(|p| FileDigest::of(p, p.display().to_string()))
            .collect::<Result<_>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(dir).unwrap_or(p);
                FileDigest::of(p, rel.display().to_string())
            })
            .collect::<Result<_>>()?;
        let m = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            stage: self.stage,
            argv: ctx.argv.clone(),
            config: self.config,
            config_digest,
            seeds: self.seeds,
            threads: ctx.threads,
            inputs,
            outputs,
            duration_ms: self.started.elapsed().as_millis() as u64,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        write(path, text)?;
        Ok(m)
    }
}

pub fn load(path: &Path) -> Result<RunManifest> {
    let data = read(path)?;
    serde_json::from_slice(&data).with_context(|| format!("invalid manifest {}", path.display()))
}
