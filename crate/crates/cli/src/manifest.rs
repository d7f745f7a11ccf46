//! Run manifests: what ran, with which resolved settings, and the hash of
//! every file it produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// Keyed by role (`model`, `metrics`, ...).
    pub outputs: BTreeMap<String, OutputFile>,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: Option<f64>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunManifest {
    /// Writes the unfinished manifest to `dir` straight away.
    pub fn begin(dir: &Path, command: &str, config: serde_json::Value, seed: u64) -> Result<Self, CliError> {
        let m = Self {
            command: command.into(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            outputs: BTreeMap::new(),
            started: now(),
            finished: None,
        };
        m.write(dir)?;
        Ok(m)
    }

    /// Records `file` (relative to `dir`) under `role`.
    pub fn record(&mut self, dir: &Path, role: &str, file: &str) -> Result<(), CliError> {
        let sha256 = sha256_file(&dir.join(file))?;
        self.outputs.insert(role.into(), OutputFile { path: file.into(), sha256 });
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> Result<Self, CliError> {
        self.finished = Some(now());
        self.write(dir)?;
        Ok(self)
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Usage(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad manifest {}: {e}", path.display())))
    }

    /// Manifest next to `model`, after checking that it vouches for the
    /// model file's current contents.
    pub fn for_model(model: &Path) -> Result<Self, CliError> {
        let dir = model.parent().unwrap_or(Path::new("."));
        let manifest = Self::load(&dir.join(MANIFEST_FILE))?;
        if manifest.finished.is_none() {
            return Err(CliError::Usage("the run that produced this model never finished".into()));
        }
        let entry = manifest
            .outputs
            .values()
            .find(|o| dir.join(&o.path) == model || o.path.file_name() == model.file_name())
            .ok_or_else(|| CliError::Usage(format!("manifest does not list {}", model.display())))?;
        let actual = sha256_file(model)?;
        if actual != entry.sha256 {
            return Err(CliError::Usage(format!(
                "model file hash {actual} does not match the manifest ({}); refusing to evaluate",
                entry.sha256
            )));
        }
        Ok(manifest)
    }
}
