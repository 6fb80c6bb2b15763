use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineConfig, PipelineError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Provenance record written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: u64,
    /// SHA-256 of the resolved config text.
    pub config_sha256: String,
    /// Role name to SHA-256 of the bytes read.
    pub inputs: BTreeMap<String, String>,
    /// File name (relative to the stage directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(stage_dir: &Path) -> Result<Manifest, PipelineError> {
        let path = stage_dir.join(MANIFEST_FILE);
        let text = read_file(&path)?;
        serde_json::from_slice(&text).map_err(|e| PipelineError::Data {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Re-hashes every listed output and returns the names that differ.
    pub fn verify(&self, stage_dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|(name, hash)| fs::read(stage_dir.join(name)).map(|b| sha256_hex(&b)).ok().as_ref() != Some(*hash))
            .map(|(name, _)| name.clone())
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Collects one stage's outputs in a staging directory and moves them into
/// place only when the stage finishes. Dropping an unfinished stage deletes
/// everything it wrote.
#[derive(Debug)]
pub struct Stage {
    name: String,
    dest: PathBuf,
    staging: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    finished: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Stage {
    /// `name` may contain `/` to nest, e.g. `train/linear`.
    pub fn begin(out: &Path, name: &str) -> Result<Stage, PipelineError> {
        let dest = out.join(name);
        let mut staging = dest.clone().into_os_string();
        staging.push(".partial");
        let staging = PathBuf::from(staging);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        Ok(Stage {
            name: name.to_string(),
            dest,
            staging,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            finished: false,
        })
    }

    pub fn dest(&self) -> &Path {
        &self.dest
    }

    /// Reads an input file and records its hash under `role`.
    pub fn input(&mut self, role: &str, path: &Path) -> Result<Vec<u8>, PipelineError> {
        let bytes = read_file(path)?;
        self.inputs.insert(role.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn input_text(&mut self, role: &str, path: &Path) -> Result<String, PipelineError> {
        String::from_utf8(self.input(role, path)?).map_err(|e| PipelineError::Data {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Records an input that did not come from a file.
    pub fn input_bytes(&mut self, role: &str, bytes: &[u8]) {
        self.inputs.insert(role.to_string(), sha256_hex(bytes));
    }

    pub fn write(&mut self, file: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.staging.join(file);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.outputs.insert(file.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes the resolved config and manifest, then replaces any previous
    /// output of this stage.
    pub fn finish(mut self, config: &PipelineConfig) -> Result<Manifest, PipelineError> {
        let config_text = config.to_toml();
        let manifest = Manifest {
            tool: "amhate".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: self.name.clone(),
            seed: config.seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
        };
        let path = self.staging.join(CONFIG_FILE);
        fs::write(&path, &config_text).map_err(io_err(&path))?;
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        let path = self.staging.join(MANIFEST_FILE);
        fs::write(&path, json).map_err(io_err(&path))?;

        if self.dest.exists() {
            fs::remove_dir_all(&self.dest).map_err(io_err(&self.dest))?;
        }
        fs::rename(&self.staging, &self.dest).map_err(io_err(&self.dest))?;
        self.finished = true;
        log::info!("{} -> {}", self.name, self.dest.display());
        Ok(manifest)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
