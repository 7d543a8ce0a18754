//! Output directory handling: atomic writes, provenance headers and the
//! manifest used by `--verify`.

use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    /// File name to FNV-1a 64 hash of its bytes.
    pub files: BTreeMap<String, String>,
}

pub fn hex(h: u64) -> String {
    format!("{h:016x}")
}

pub fn file_hash(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Runtime(format!("bad output path {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct OutputDir {
    dir: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str, config_hash: u64, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                config_hash: hex(config_hash),
                tool_version: TOOL_VERSION.to_string(),
                seed,
                files: BTreeMap::new(),
            },
        })
    }

    fn header(&self) -> String {
        format!(
            "# config_hash={},tool_version={},command={},seed={}\n",
            self.manifest.config_hash, self.manifest.tool_version, self.manifest.command, self.manifest.seed
        )
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.manifest.files.insert(name.to_string(), hex(file_hash(bytes)));
        Ok(())
    }

    /// CSV with a provenance comment line, a column header and the rows.
    pub fn csv(&mut self, name: &str, columns: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut out = self.header();
        out.push_str(&columns.join(","));
        out.push('\n');
        for row in rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        self.put(name, out.as_bytes())
    }

    /// JSON report wrapped with the config hash and tool version.
    pub fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            command: &'a str,
            config_hash: &'a str,
            tool_version: &'a str,
            seed: u64,
            report: &'a T,
        }
        let wrapped = Wrapped {
            command: &self.manifest.command,
            config_hash: &self.manifest.config_hash,
            tool_version: &self.manifest.tool_version,
            seed: self.manifest.seed,
            report,
        };
        let mut text = serde_json::to_string_pretty(&wrapped).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    pub fn finish(self) -> Result<Manifest, CliError> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes())?;
        Ok(self.manifest)
    }
}

/// Checks an existing output directory against its manifest and the
/// expected config hash. Returns the list of problems found.
pub fn verify(dir: &Path, command: &str, config_hash: u64) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("malformed manifest: {e}")))?;
    let mut problems = Vec::new();
    if manifest.command != command {
        problems.push(format!("manifest is for command {}", manifest.command));
    }
    if manifest.config_hash != hex(config_hash) {
        problems.push(format!(
            "config hash {} differs from manifest {}",
            hex(config_hash),
            manifest.config_hash
        ));
    }
    for (name, want) in &manifest.files {
        match fs::read(dir.join(name)) {
            Ok(bytes) => {
                let got = hex(file_hash(&bytes));
                if &got != want {
                    problems.push(format!("{name}: hash {got}, manifest {want}"));
                }
            }
            Err(e) => problems.push(format!("{name}: {e}")),
        }
    }
    Ok(problems)
}

pub fn num(x: f64) -> String {
    format!("{x}")
}
