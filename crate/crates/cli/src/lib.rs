//! Command implementations behind the `segensemble` binary.
//!
//! Every `cmd_*` function takes its parsed arguments, performs the whole
//! command and returns a summary value, so the binary and the tests drive
//! exactly the same code.

mod compare;
mod eval;
mod fuse;
mod provenance;
mod select;
mod synth;

pub use compare::{cmd_compare, render as render_ranking, CompareArgs, CompareOutcome, ComparisonRow};
pub use eval::{cmd_eval, EvalArgs, Prediction};
pub use fuse::{cmd_fuse, FuseArgs, StapleOverrides};
pub use provenance::{sha256_file, FileDigest, Provenance};
pub use select::{cmd_select_bm, load_model_metrics, SelectArgs};
pub use synth::{cmd_synth, SynthArgs};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] segensemble::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit status contract.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const VALIDATION: u8 = 2;
    pub const INTERNAL: u8 = 3;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(segensemble::Error::InvalidArgument(_)) => exit::USAGE,
            CliError::Core(_) => exit::VALIDATION,
            CliError::Internal(_) => exit::INTERNAL,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(segensemble::Error::Io { path: path.to_path_buf(), source })
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub(crate) fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Core(segensemble::Error::Validation(format!(
            "{what} {} does not exist or is not a file",
            path.display()
        ))))
    }
}

/// `path` relative to `base` when it lies below it, unchanged otherwise.
pub(crate) fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

pub(crate) fn toml_string<T: serde::Serialize>(value: &T) -> CliResult<String> {
    toml::to_string(value).map_err(|e| CliError::Internal(format!("cannot serialize TOML: {e}")))
}
