use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Collects every file a command writes so the manifest can list them.
pub struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
    quiet: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    core_version: &'a str,
    seed: u64,
    config_sha256: String,
    outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Outputs {
    pub fn new(root: impl Into<PathBuf>, quiet: bool) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root, files: Vec::new(), quiet })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
        Ok(p)
    }

    /// Notes a file written by someone else (a core writer, a plot).
    pub fn record(&mut self, path: impl Into<PathBuf>) {
        self.files.push(path.into());
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let p = self.path(rel)?;
        fs::write(&p, contents).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.record(p.clone());
        Ok(p)
    }

    pub fn write_json(&mut self, rel: impl AsRef<Path>, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))? + "\n";
        self.write(rel, text)
    }

    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Writes `manifest_<command>.json` listing every recorded output
    /// relative to the root. Commands sharing a directory keep separate manifests.
    pub fn finish(mut self, command: &str, seed: u64, config_text: &str) -> Result<PathBuf, CliError> {
        let mut outputs: Vec<String> = self
            .files
            .iter()
            .map(|p| p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/"))
            .collect();
        outputs.sort();
        outputs.dedup();
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            core_version: chv_core::VERSION,
            seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            outputs,
        };
        self.files.clear();
        let p = self.write_json(format!("manifest_{command}.json"), &manifest)?;
        self.note(format!("wrote {}", p.display()));
        Ok(p)
    }
}
