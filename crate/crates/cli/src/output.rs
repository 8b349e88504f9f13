//! Artifact directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use zulf_core::io::Table;

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: digest(&bytes),
        bytes: bytes.len() as u64,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub zulf_cli: &'static str,
    pub zulf_core: &'static str,
}

/// Reproducibility record written next to every set of artifacts.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub versions: Versions,
    pub command: String,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub struct OutputDir {
    dir: PathBuf,
    outputs: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
        Ok(OutputDir { dir, outputs: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: digest(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let text = table.to_csv_string()?;
        self.write_bytes(name, text.as_bytes())
    }

    pub fn finish(
        self,
        command: &str,
        parameters: serde_json::Value,
        seed: Option<u64>,
        inputs: Vec<FileDigest>,
    ) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            tool: "zulf",
            versions: Versions {
                zulf_cli: env!("CARGO_PKG_VERSION"),
                zulf_core: zulf_core::VERSION,
            },
            command: command.to_string(),
            parameters,
            seed,
            inputs,
            outputs: self.outputs,
        };
        let path = self.dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
