use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one invocation: what ran, on which inputs, with which settings.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, threads: Option<usize>) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config: serde_json::Value::Null,
            seed,
            threads,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes the manifest to `dest`, or to stderr when there is no output file to sit beside.
    pub fn finish(mut self, dest: Option<PathBuf>) -> Result<()> {
        self.finished_unix = now();
        let json = serde_json::to_string_pretty(&self)?;
        match dest {
            Some(path) => std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display())),
            None => {
                eprintln!("{}", serde_json::to_string(&self)?);
                Ok(())
            }
        }
    }
}

/// `out.ext` gets `out.ext.manifest.json`.
pub fn beside(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
