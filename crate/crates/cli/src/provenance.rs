use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{io_err, relative_to, toml_string, write_text, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    /// Hash `path`, recording it relative to `base` so records do not depend
    /// on where a run was placed.
    pub fn of(path: &Path, base: &Path) -> CliResult<Self> {
        Ok(Self { path: relative_to(path, base), sha256: sha256_file(path)? })
    }
}

/// What a command did, written next to its outputs. Deliberately free of
/// timestamps and absolute paths so identical runs give identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub method: Option<String>,
    pub params: toml::Table,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            method: None,
            params: toml::Table::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_text(path, &toml_string(self)?)
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
