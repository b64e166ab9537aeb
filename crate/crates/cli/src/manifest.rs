// SPDX-License-Identifier: Apache-2.0

//! Run manifests and cleanup of partial outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{sha256_hex, RunConfig};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: &'a RunConfig,
    pub inputs: Vec<InputHash>,
    /// Output file names, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cli: reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Files and directories a command creates. Unless `commit` is called,
/// dropping the guard removes them again.
#[derive(Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    done: bool,
}

impl Outputs {
    /// Registers `path` for removal on failure, unless it already existed.
    pub fn file(&mut self, path: &Path) -> PathBuf {
        if !path.exists() {
            self.files.push(path.to_path_buf());
        }
        path.to_path_buf()
    }

    /// Creates `dir` (and parents) and registers the new part for removal.
    pub fn dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            std::fs::create_dir_all(dir).with_context(|| format!("cli: creating {}", dir.display()))?;
            self.dirs.push(dir.to_path_buf());
        }
        Ok(())
    }

    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        self.file(path);
        std::fs::write(path, contents).with_context(|| format!("cli: writing {}", path.display()))
    }

    pub fn commit(mut self) {
        self.done = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}

/// Writes `<artifact>.manifest.json` next to `artifact`, or
/// `manifest.json` inside it when it is a directory.
pub fn write_manifest(
    outputs: &mut Outputs,
    command: &str,
    config: &RunConfig,
    inputs: &[&Path],
    artifact: &Path,
    produced: &[PathBuf],
) -> Result<PathBuf> {
    let (path, base) = if artifact.is_dir() {
        (artifact.join("manifest.json"), artifact.to_path_buf())
    } else {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let parent = artifact.parent().map(Path::to_path_buf).unwrap_or_default();
        (artifact.with_file_name(name), parent)
    };
    let inputs = inputs
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.display().to_string(),
                sha256: file_sha256(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outputs_rel = produced
        .iter()
        .map(|p| p.strip_prefix(&base).unwrap_or(p).display().to_string())
        .collect();
    let manifest = Manifest {
        tool: "gatelab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: config.seed,
        config_sha256: config.hash(),
        config,
        inputs,
        outputs: outputs_rel,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    outputs.write(&path, text)?;
    Ok(path)
}
