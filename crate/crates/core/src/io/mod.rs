//! Run configs, checkpoints, track files and report writers.
//!
//! Every file is written to a temporary sibling first and renamed into
//! place, so readers never observe partial output.

mod checkpoint;
mod config;
mod reports;
mod tracks;

pub use checkpoint::{load_checkpoint, model_checksum, save_checkpoint, Checkpoint};
pub use config::{ArchChoice, ArchConfig, ReportFormat, RobustnessConfig, RunConfig, RUN_CONFIG_SCHEMA};
pub use reports::{
    ablation_csv, metrics_csv, plot_series, robustness_csv, sweep_csv, train_log_csv, MetricsReport, StageReport,
};
pub use tracks::{decode_tracks, encode_tracks, load_tracks, save_tracks, TrackFile};

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Version stamped into every file this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
