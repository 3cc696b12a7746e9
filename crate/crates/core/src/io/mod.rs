//! File formats: experiment config, datasets, checkpoints and CSV exports.

mod checkpoint;
mod config;
mod dataset_file;
mod export;

use std::path::Path;

pub use checkpoint::{fnv1a64, Checkpoint, CHECKPOINT_VERSION};
pub use config::{DataConfig, ExperimentConfig, OutputConfig, SweepConfig, TuneConfig};
pub use dataset_file::{dataset_from_text, dataset_to_text, read_dataset, write_dataset};
pub use export::{forward_kl_csv, histograms_csv, loss_history_csv, matrix_csv, write_json};

use crate::error::{Error, Result};

/// Fails with [`Error::Overwrite`] if `path` exists and `force` is off.
pub fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Overwrite(path.to_path_buf()));
    }
    Ok(())
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str, force: bool) -> Result<()> {
    ensure_writable(path, force)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
