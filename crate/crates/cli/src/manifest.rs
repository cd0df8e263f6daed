//! One JSON record per run: what ran, with which settings and inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mamforge_core::config::Config;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliResult;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// Resolved configuration, defaults included.
    pub config: BTreeMap<String, String>,
    /// Input path → SHA-256 of its contents (hex).
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    /// `ok` or `error:<category>`.
    pub status: String,
    /// Run metadata such as the cycling bias or stop reason.
    pub notes: BTreeMap<String, String>,
}

pub fn digest_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Recorder {
    start: Instant,
    pub manifest: RunManifest,
    target: Option<PathBuf>,
}

impl Recorder {
    /// `target` is where the manifest goes; `None` prints it to stderr.
    pub fn new(subcommand: &str, target: Option<PathBuf>) -> Self {
        Recorder {
            start: Instant::now(),
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                version: mamforge_core::VERSION.to_string(),
                config: BTreeMap::new(),
                inputs: BTreeMap::new(),
                seed: None,
                wall_time_s: 0.0,
                status: "ok".into(),
                notes: BTreeMap::new(),
            },
            target,
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let d = digest_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), d);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.manifest.notes.insert(key.to_string(), value.to_string());
    }

    /// Writes the manifest, marking the run failed when `result` is an error.
    pub fn finish<T>(mut self, config: Option<&Config>, result: CliResult<T>) -> CliResult<T> {
        if let Some(c) = config {
            self.manifest.config = c.resolved();
            for (k, v) in c.entries() {
                self.manifest
                    .config
                    .entry(k.to_string())
                    .or_insert_with(|| v.to_string());
            }
        }
        if let Err(f) = &result {
            self.manifest.status = format!("error:{}", f.category());
        }
        self.manifest.wall_time_s = self.start.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self.manifest).map_err(mamforge_core::Error::Json)?;
        match &self.target {
            Some(p) => std::fs::write(p, json + "\n")?,
            None => eprintln!(
                "manifest: {}",
                serde_json::to_string(&self.manifest).map_err(mamforge_core::Error::Json)?
            ),
        }
        result
    }
}

/// `<path>.manifest.json`.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
