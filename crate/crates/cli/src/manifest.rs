//! Per-stage run manifests and hash-validated stage skipping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use navbench::{sha256_hex, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    /// Path (relative to the run root when possible) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_s: f64,
    /// `ok` or `failed: <message>`.
    pub status: String,
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(sha256_hex(&bytes))
}

fn key(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn hashes(root: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((key(root, p), file_hash(p)?))).collect()
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::Io { path: tmp.clone(), source: e })?;
    fs::rename(&tmp, path).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// A pipeline stage: what it reads, what it writes, and its configuration.
pub struct Stage<'a> {
    pub root: &'a Path,
    pub manifest: PathBuf,
    pub name: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Stage<'_> {
    fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.config).expect("json").as_bytes())
    }

    /// True when a previous manifest records success for the same config and
    /// inputs and every recorded output still has its recorded hash.
    pub fn is_complete(&self) -> bool {
        let Ok(text) = fs::read_to_string(&self.manifest) else { return false };
        let Ok(m) = serde_json::from_str::<RunManifest>(&text) else { return false };
        if m.status != "ok" || m.config_hash != self.config_hash() {
            return false;
        }
        match hashes(self.root, &self.inputs) {
            Ok(h) if h == m.inputs => {}
            _ => return false,
        }
        let wanted: Vec<String> = self.outputs.iter().map(|p| key(self.root, p)).collect();
        if wanted.iter().any(|k| !m.outputs.contains_key(k)) {
            return false;
        }
        matches!(hashes(self.root, &self.outputs), Ok(h) if h == m.outputs)
    }

    /// Runs `body` unless the stage is already complete; always leaves a
    /// manifest describing the outcome. Returns whether the body ran.
    pub fn run(&self, body: impl FnOnce() -> Result<()>) -> Result<bool> {
        if self.is_complete() {
            return Ok(false);
        }
        let t0 = Instant::now();
        let outcome = hashes(self.root, &self.inputs).and_then(|inputs| body().map(|_| inputs));
        let mut m = RunManifest {
            tool: "navbench".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: self.name.clone(),
            config: self.config.clone(),
            config_hash: self.config_hash(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_clock_s: 0.0,
            status: "ok".into(),
        };
        let result = match outcome {
            Ok(inputs) => {
                m.inputs = inputs;
                hashes(self.root, &self.outputs).map(|o| m.outputs = o)
            }
            Err(e) => Err(e),
        };
        if let Err(e) = &result {
            m.status = format!("failed: {e}");
        }
        m.wall_clock_s = t0.elapsed().as_secs_f64();
        write_atomic(&self.manifest, (serde_json::to_string_pretty(&m).expect("json") + "\n").as_bytes())?;
        result.map(|_| true)
    }
}
