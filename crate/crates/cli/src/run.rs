//! Per-run artifact directory and manifest bookkeeping.
//!
//! Each invocation gets a fresh `<subcommand>-<unix-seconds>[-<n>]`
//! directory under the output root (append-only, never overwritten). The
//! manifest captures the effective configuration, its hash, the input file
//! hashes and the produced file names; it deliberately excludes timestamps
//! so identical configurations yield byte-identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub struct RunContext {
    run_dir: PathBuf,
    subcommand: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact_version: &'static str,
    subcommand: &'a str,
    config: &'a serde_json::Value,
    config_sha256: String,
    inputs_sha256: &'a BTreeMap<String, String>,
    outputs: &'a [String],
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

impl RunContext {
    pub fn create(
        out_root: &Path,
        subcommand: &str,
        config: impl Serialize,
    ) -> Result<Self> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        fs::create_dir_all(out_root)
            .with_context(|| format!("creating output root {}", out_root.display()))?;
        let mut run_dir = out_root.join(format!("{subcommand}-{stamp}"));
        let mut counter = 1;
        while run_dir.exists() {
            run_dir = out_root.join(format!("{subcommand}-{stamp}-{counter}"));
            counter += 1;
        }
        fs::create_dir(&run_dir)
            .with_context(|| format!("creating run directory {}", run_dir.display()))?;
        Ok(Self {
            run_dir,
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    /// Hash an input file into the manifest.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes =
            fs::read(path).with_context(|| format!("reading input {}", path.display()))?;
        self.inputs
            .insert(path.to_string_lossy().into_owned(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn record_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write_text(&mut self, name: &str, content: &str) -> Result<()> {
        fs::write(self.path(name), content)
            .with_context(|| format!("writing {name}"))?;
        self.record_output(name);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Write the manifest and report the run directory on stdout.
    pub fn finish(mut self) -> Result<()> {
        self.outputs.sort();
        let config_text = serde_json::to_string(&self.config)?;
        let manifest = Manifest {
            artifact_version: env!("CARGO_PKG_VERSION"),
            subcommand: &self.subcommand,
            config: &self.config,
            config_sha256: sha256_hex(config_text.as_bytes()),
            inputs_sha256: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.path("manifest.json"), text)?;
        println!("run directory: {}", self.run_dir.display());
        Ok(())
    }
}
