//! Run manifests: what ran, with which resolved configuration, on which
//! inputs (by content hash), producing which outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    /// SHA-256 of `"blob <len>\0"` followed by the content, as git hashes
    /// objects.
    pub blob_sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path, recorded_as: String) -> Result<Self> {
        let content = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(FileRecord { path: recorded_as, bytes: content.len() as u64, blob_sha256: blob_hash(&content) })
    }
}

pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub subcommand: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub out: PathBuf,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<FileRecord>,
    /// Paths relative to `out`.
    pub outputs: Vec<FileRecord>,
    pub started_at: String,
    pub finished_at: String,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.manifest_version != MANIFEST_VERSION {
            bail!("unsupported manifest version {}", m.manifest_version);
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// Recorded inputs whose current content no longer matches.
    pub fn changed_inputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for rec in &self.inputs {
            let path = self.cwd.join(&rec.path);
            let now = FileRecord::of(&path, rec.path.clone())?;
            if now.blob_sha256 != rec.blob_sha256 {
                changed.push(rec.path.clone());
            }
        }
        Ok(changed)
    }
}

/// `argv` with the value of `--out` replaced.
pub fn with_out(argv: &[String], out: &Path) -> Result<Vec<String>> {
    let mut rewritten = Vec::with_capacity(argv.len());
    let mut found = false;
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        if arg == "--out" {
            it.next();
            rewritten.push(arg.clone());
            rewritten.push(out.display().to_string());
            found = true;
        } else if arg.starts_with("--out=") {
            rewritten.push(format!("--out={}", out.display()));
            found = true;
        } else {
            rewritten.push(arg.clone());
        }
    }
    if !found {
        bail!("recorded arguments have no --out");
    }
    Ok(rewritten)
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputComparison {
    pub path: String,
    pub identical: bool,
}

/// Compares output hashes of two manifests by relative path.
pub fn compare_outputs(recorded: &RunManifest, rerun: &RunManifest) -> Vec<OutputComparison> {
    recorded
        .outputs
        .iter()
        .map(|rec| OutputComparison {
            path: rec.path.clone(),
            identical: rerun.outputs.iter().any(|o| o.path == rec.path && o.blob_sha256 == rec.blob_sha256),
        })
        .collect()
}
