//! Run manifest: config hash, versions, seeds, stage timings, and the full
//! inventory of emitted files. Timings are the only fields that vary between
//! reruns of an identical configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub versions: Versions,
    pub seeds: BTreeMap<String, u64>,
    pub timings_ms: Vec<(String, u128)>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub bundle_format: u32,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String) -> Self {
        RunManifest {
            command: command.to_owned(),
            config_hash,
            versions: Versions { cli: env!("CARGO_PKG_VERSION"), bundle_format: 1 },
            seeds: BTreeMap::new(),
            timings_ms: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_owned(), value);
    }

    /// Runs a stage and records its wall time.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings_ms.push((name.to_owned(), start.elapsed().as_millis()));
        Ok(out)
    }

    /// Writes `content` into the output directory and records the file.
    pub fn emit(&mut self, dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_owned());
        Ok(path)
    }

    /// Writes the manifest itself as `<command>-manifest.json`.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        let name = format!("{}-manifest.json", self.command);
        self.outputs.push(name.clone());
        let path = dir.join(&name);
        let json = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
