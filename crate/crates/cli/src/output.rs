use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything that determines a command's outputs.
#[derive(Debug, Serialize)]
struct Provenance<'a> {
    command: &'a str,
    seed: u64,
    dt: f64,
    config: &'a RunConfig,
    inputs: &'a BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    dt: f64,
    config_hash: String,
    config: &'a RunConfig,
    /// Input path as given to its SHA-256.
    inputs: &'a BTreeMap<String, String>,
    /// Output file name to its SHA-256.
    outputs: &'a BTreeMap<String, String>,
}

/// Collects a command's output files and writes its manifest last.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Output {
    pub fn new(dir: &Path, command: &'static str) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            command,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    /// Read an input file and record its hash.
    pub fn read(&mut self, path: &Path) -> anyhow::Result<String> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn finish(self, seed: u64, dt: f64, config: &RunConfig) -> anyhow::Result<()> {
        let provenance = Provenance {
            command: self.command,
            seed,
            dt,
            config,
            inputs: &self.inputs,
        };
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            dt,
            config_hash: sha256_hex(serde_json::to_string(&provenance)?.as_bytes()),
            config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}
