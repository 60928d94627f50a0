use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub jobs: Option<usize>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects inputs read and outputs written during a command. Outputs are
/// written through a temporary file and renamed, and all of them are
/// removed again if the command fails.
pub struct Run {
    command: String,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: Vec<(PathBuf, String)>,
    created_dirs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created_dirs: Vec::new(),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    /// Reads and records an input.
    pub fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = crate::error::read_input(path)?;
        self.record_input(path, &bytes);
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> CliResult<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|_| CliError::validation(Some(path), "input is not valid UTF-8"))
    }

    pub fn ensure_dir(&mut self, dir: &Path) -> CliResult<()> {
        if !dir.exists() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(Some(dir), format!("cannot create directory: {e}")))?;
            self.created_dirs.push(dir.to_path_buf());
        }
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.ensure_dir(parent)?;
        }
        let tmp = path.with_extension(format!(
            "{}.partial",
            path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
        ));
        let result = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
        if let Err(e) = result {
            let _ = std::fs::remove_file(&tmp);
            return Err(CliError::runtime(Some(path), format!("cannot write output: {e}")));
        }
        self.outputs.push((path.to_path_buf(), sha256_hex(bytes)));
        Ok(())
    }

    /// Registers a file some library call already wrote.
    pub fn adopt_output(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::runtime(Some(path), e))?;
        self.outputs.push((path.to_path_buf(), sha256_hex(&bytes)));
        Ok(())
    }

    /// Deletes everything this run wrote.
    pub fn rollback(&mut self) {
        for (p, _) in self.outputs.drain(..) {
            let _ = std::fs::remove_file(p);
        }
        for d in self.created_dirs.drain(..).rev() {
            let _ = std::fs::remove_dir(d);
        }
    }

    /// Writes the manifest to `path` as pretty JSON.
    pub fn finish(
        mut self,
        path: &Path,
        config: serde_json::Value,
        seed: Option<u64>,
        opts: &crate::GlobalOptions,
    ) -> CliResult<()> {
        let manifest = RunManifest {
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            deterministic: opts.deterministic,
            jobs: opts.jobs,
            inputs: self.inputs.iter().map(|(p, h)| FileDigest { path: p.clone(), sha256: h.clone() }).collect(),
            outputs: self
                .outputs
                .iter()
                .map(|(p, h)| FileDigest { path: p.display().to_string(), sha256: h.clone() })
                .collect(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        match self.write(path, text.as_bytes()) {
            Ok(()) => Ok(()),
            Err(e) => {
                self.rollback();
                Err(e)
            }
        }
    }
}

/// `<out>.manifest.json` for a file output.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
