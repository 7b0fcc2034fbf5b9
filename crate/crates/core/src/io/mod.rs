//! On-disk formats: datasets, checkpoints, run configuration, metrics CSV and
//! SVG reports.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod metrics_csv;
pub mod report;

use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_run_config, parse_run_config, save_run_config, RunConfig};
pub use dataset::{decode_dataset, encode_dataset, load_dataset, save_dataset};
pub use metrics_csv::{metrics_from_csv, metrics_to_csv, read_metrics_csv, write_metrics_csv, MetricsWriter};
pub use report::{write_report, write_sweep_report, SweepRow};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::Io)
}
