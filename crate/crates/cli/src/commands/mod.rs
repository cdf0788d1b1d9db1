//! Command implementations. Each returns structured results and writes its
//! artifacts (checkpoints, CSV tables) under the configured output
//! directory; progress text goes to stderr so stdout stays a clean report.

mod eval;
mod finetune;
mod pretrain;
mod sweep;

pub use eval::cmd_eval;
pub use finetune::cmd_finetune;
pub use pretrain::cmd_pretrain;
pub use sweep::{cmd_sweep, SweepAxis};

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fltrain_core::{CsvValue, IterationRecord};

pub(crate) fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub(crate) const LOG_HEADER: [&str; 6] =
    ["iteration", "loss", "val_accuracy", "bytes_to_device", "bytes_from_device", "elapsed_ms"];

pub(crate) fn log_rows(log: &[IterationRecord]) -> Vec<Vec<CsvValue>> {
    log.iter()
        .map(|r| {
            vec![
                CsvValue::Int(r.iteration as i64),
                CsvValue::Float(r.loss),
                CsvValue::Float(r.val_accuracy),
                CsvValue::Int(r.bytes_to_device as i64),
                CsvValue::Int(r.bytes_from_device as i64),
                CsvValue::Float(r.elapsed_ms),
            ]
        })
        .collect()
}

pub(crate) fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
