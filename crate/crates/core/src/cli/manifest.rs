use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GscError, Result};
use crate::io::write_json;

/// Record of one CLI invocation. Its `config` snapshot is a valid `--config`
/// file for the same command, so a run can be repeated from the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: Vec<String>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub master_seed: u64,
    /// Seeds derived from the master seed, by stage.
    pub stage_seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file, keyed by path.
    pub input_digests: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds by stage.
    pub timings_s: BTreeMap<String, f64>,
    pub threads: usize,
    pub version: String,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, master_seed: u64) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            command_line: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            master_seed,
            stage_seeds: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            outputs: Vec::new(),
            timings_s: BTreeMap::new(),
            threads: rayon::current_num_threads(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = file_sha256(path)?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Runs `f` and records its wall-clock time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_s.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    /// Writes the manifest as `manifest.json` in `dir`.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        self.outputs.push(path.clone());
        write_json(&path, &self)?;
        Ok(path)
    }
}

/// Lower-case hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| GscError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            file_sha256(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
